//! Relation-path generators scored as autoregressive distributions
//! `P(z | q) = prod_i P(r_i | r_<i, q) * P(end | z, q)`.
//!
//! Structural constraints shared by every model: a path has at least one
//! hop, at most `max_len` hops, and the text hop only appears alone. Forced
//! steps (a single allowed continuation) have probability one, so every
//! model here is a proper distribution over valid paths.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{Graph, RelationPath, RelationType};
use crate::text::tokens;

use super::{PlanError, ScoredPath};

/// Additive smoothing for [`FrequencyPathModel`].
pub const DEFAULT_EPSILON: f64 = 0.01;

const KEYWORD_BUCKETS: u32 = 4096;

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "that", "this", "from", "are", "was", "were", "what", "which", "who",
    "whom", "whose", "how", "any", "all", "can", "you", "your", "has", "have", "had", "show", "find",
    "list", "give", "some", "about", "into", "also", "there", "their", "them", "they", "its", "but",
    "not", "does", "did", "been", "being", "other", "such", "than", "then", "these", "those", "me",
];

/// What a path model conditions on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanQuery {
    pub text: String,
    /// Node types of the matched topic nodes.
    pub seed_types: BTreeSet<String>,
}

impl PlanQuery {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            seed_types: BTreeSet::new(),
        }
    }

    pub fn with_seed_types<I, S>(mut self, types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.seed_types = types.into_iter().map(Into::into).collect();
        self
    }

    fn type_signature(&self) -> String {
        self.seed_types.iter().cloned().collect::<Vec<_>>().join("|")
    }

    /// Hashed content-word buckets of the question text.
    pub fn keyword_buckets(&self) -> Vec<u32> {
        let mut out: Vec<u32> = tokens(&self.text)
            .into_iter()
            .filter(|t| t.chars().count() >= 3 && !STOPWORDS.contains(&t.as_str()))
            .map(|t| {
                let d = Sha256::digest(t.as_bytes());
                u32::from_be_bytes([d[0], d[1], d[2], d[3]]) % KEYWORD_BUCKETS
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub trait PathModel: Send + Sync {
    /// Natural-log probability; `-inf` for paths outside the model's support.
    fn log_prob(&self, query: &PlanQuery, path: &RelationPath) -> f64;

    /// The `n` most probable paths, scores being probabilities, in
    /// non-increasing order.
    fn generate(&self, query: &PlanQuery, n: usize) -> Result<Vec<ScoredPath>, PlanError>;
}

/// Token inventory: relation hops (forward and inverse) plus the text hop.
/// The end-of-path token is `len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathVocab {
    tokens: IndexSet<RelationType>,
    max_len: usize,
}

impl PathVocab {
    pub fn new(relations: impl IntoIterator<Item = RelationType>, max_len: usize) -> Self {
        let mut tokens: IndexSet<RelationType> = relations.into_iter().filter(|r| !r.is_text()).collect();
        tokens.insert(RelationType::text());
        Self {
            tokens,
            max_len: max_len.max(1),
        }
    }

    /// Every stored relation in both directions, plus the text hop.
    pub fn from_graph(graph: &Graph, max_len: usize) -> Self {
        let mut rels = Vec::new();
        for r in graph.relation_types() {
            rels.push(r.clone());
            rels.push(r.inverse());
        }
        Self::new(rels, max_len)
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn end(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn token(&self, id: u32) -> &RelationType {
        &self.tokens[id as usize]
    }

    pub fn id(&self, rel: &RelationType) -> Option<u32> {
        self.tokens.get_index_of(rel).map(|i| i as u32)
    }

    pub fn contains(&self, rel: &RelationType) -> bool {
        self.tokens.contains(rel)
    }

    fn is_text(&self, id: u32) -> bool {
        id != self.end() && self.token(id).is_text()
    }

    /// Allowed continuations after `prefix`.
    fn allowed(&self, prefix: &[u32]) -> Vec<u32> {
        let end = self.end();
        if prefix.is_empty() {
            return (0..end).collect();
        }
        if prefix.len() >= self.max_len || self.is_text(prefix[0]) {
            return vec![end];
        }
        (0..end).filter(|&t| !self.is_text(t)).chain([end]).collect()
    }

    /// Token ids of `path`, or `None` if it is outside the support.
    fn encode(&self, path: &RelationPath) -> Option<Vec<u32>> {
        if path.is_empty() || path.len() > self.max_len || (path.has_text() && path.len() > 1) {
            return None;
        }
        path.hops().iter().map(|h| self.id(h)).collect()
    }

    fn decode(&self, ids: &[u32]) -> RelationPath {
        RelationPath::new(ids.iter().map(|&i| self.token(i).clone()).collect())
    }

    fn extend_vocab(&mut self, path: &RelationPath) {
        for hop in path.hops() {
            self.tokens.insert(hop.clone());
        }
        self.max_len = self.max_len.max(path.len());
    }
}

/// Scores every allowed continuation of a prefix.
trait StepModel {
    fn vocab(&self) -> &PathVocab;

    /// `(token, probability)` for each allowed continuation, summing to one.
    fn step(&self, query: &PlanQuery, prefix: &[u32]) -> Vec<(u32, f64)>;
}

fn sequence_log_prob<M: StepModel>(m: &M, query: &PlanQuery, path: &RelationPath) -> f64 {
    let Some(ids) = m.vocab().encode(path) else {
        return f64::NEG_INFINITY;
    };
    let end = m.vocab().end();
    let mut lp = 0.0;
    for i in 0..=ids.len() {
        let next = ids.get(i).copied().unwrap_or(end);
        let p = m
            .step(query, &ids[..i])
            .into_iter()
            .find(|&(t, _)| t == next)
            .map_or(0.0, |(_, p)| p);
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += p.ln();
    }
    lp
}

struct Frontier {
    log_prob: f64,
    prefix: Vec<u32>,
    complete: bool,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // max-heap: higher probability first, then lexicographically smaller
    // prefix, then complete before incomplete
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_prob
            .total_cmp(&other.log_prob)
            .then_with(|| other.prefix.cmp(&self.prefix))
            .then_with(|| self.complete.cmp(&other.complete))
    }
}

/// Exact top-`n` by best-first search; extending a prefix never raises its
/// probability, so complete paths pop in probability order.
fn best_paths<M: StepModel>(m: &M, query: &PlanQuery, n: usize) -> Vec<ScoredPath> {
    let end = m.vocab().end();
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        log_prob: 0.0,
        prefix: Vec::new(),
        complete: false,
    });
    let mut out = Vec::new();
    while let Some(f) = heap.pop() {
        if out.len() >= n {
            break;
        }
        if f.complete {
            out.push(ScoredPath {
                path: m.vocab().decode(&f.prefix),
                score: f.log_prob.exp(),
            });
            continue;
        }
        for (tok, p) in m.step(query, &f.prefix) {
            if p <= 0.0 {
                continue;
            }
            let log_prob = f.log_prob + p.ln();
            if tok == end {
                heap.push(Frontier {
                    log_prob,
                    prefix: f.prefix.clone(),
                    complete: true,
                });
            } else {
                let mut prefix = f.prefix.clone();
                prefix.push(tok);
                heap.push(Frontier {
                    log_prob,
                    prefix,
                    complete: false,
                });
            }
        }
    }
    out
}

/// Every continuation equally likely.
#[derive(Debug, Clone)]
pub struct UniformPathModel {
    vocab: PathVocab,
}

impl UniformPathModel {
    pub fn new(vocab: PathVocab) -> Self {
        Self { vocab }
    }
}

impl StepModel for UniformPathModel {
    fn vocab(&self) -> &PathVocab {
        &self.vocab
    }

    fn step(&self, _: &PlanQuery, prefix: &[u32]) -> Vec<(u32, f64)> {
        let allowed = self.vocab.allowed(prefix);
        let p = 1.0 / allowed.len() as f64;
        allowed.into_iter().map(|t| (t, p)).collect()
    }
}

impl PathModel for UniformPathModel {
    fn log_prob(&self, query: &PlanQuery, path: &RelationPath) -> f64 {
        sequence_log_prob(self, query, path)
    }

    fn generate(&self, query: &PlanQuery, n: usize) -> Result<Vec<ScoredPath>, PlanError> {
        Ok(best_paths(self, query, n))
    }
}

#[derive(Debug, Clone, Default)]
struct PrefixCounts {
    total: f64,
    next: HashMap<u32, f64>,
}

type CountTable = HashMap<Vec<u32>, PrefixCounts>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Context {
    Global,
    SeedTypes(String),
    Keyword(u32),
}

impl Context {
    fn key(&self) -> String {
        match self {
            Context::Global => "global".into(),
            Context::SeedTypes(s) => format!("types:{s}"),
            Context::Keyword(b) => format!("kw:{b}"),
        }
    }

    fn parse(key: &str) -> Option<Self> {
        if key == "global" {
            Some(Context::Global)
        } else if let Some(s) = key.strip_prefix("types:") {
            Some(Context::SeedTypes(s.to_string()))
        } else {
            key.strip_prefix("kw:")?.parse().ok().map(Context::Keyword)
        }
    }
}

/// Smoothed-count path model.
///
/// Each step distribution is a mixture of additive-smoothed count estimates
/// over three context groups: all training paths, paths whose topic nodes had
/// the same type signature, and paths whose question shared a keyword
/// bucket. A group joins the mixture only when it has training mass at the
/// current prefix; keyword buckets share their group's weight equally.
#[derive(Debug, Clone)]
pub struct FrequencyPathModel {
    vocab: PathVocab,
    epsilon: f64,
    tables: HashMap<Context, CountTable>,
}

impl FrequencyPathModel {
    pub fn fit(
        mut vocab: PathVocab,
        examples: &[(PlanQuery, RelationPath)],
        epsilon: f64,
    ) -> Result<Self, PlanError> {
        if examples.is_empty() {
            return Err(PlanError::EmptyCorpus);
        }
        if !(epsilon > 0.0) {
            return Err(PlanError::Model("smoothing must be positive".into()));
        }
        for (_, path) in examples {
            if path.is_empty() || (path.has_text() && path.len() > 1) {
                return Err(PlanError::Model(format!("invalid training path {path}")));
            }
            vocab.extend_vocab(path);
        }
        let mut model = Self {
            vocab,
            epsilon,
            tables: HashMap::new(),
        };
        for (query, path) in examples {
            let ids = model.vocab.encode(path).expect("vocab extended");
            let mut contexts = vec![Context::Global, Context::SeedTypes(query.type_signature())];
            contexts.extend(query.keyword_buckets().into_iter().map(Context::Keyword));
            for ctx in contexts {
                let table = model.tables.entry(ctx).or_default();
                for i in 0..=ids.len() {
                    let next = ids.get(i).copied().unwrap_or(model.vocab.end());
                    let c = table.entry(ids[..i].to_vec()).or_default();
                    c.total += 1.0;
                    *c.next.entry(next).or_default() += 1.0;
                }
            }
        }
        Ok(model)
    }

    pub fn vocab(&self) -> &PathVocab {
        &self.vocab
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn smoothed(&self, counts: Option<&PrefixCounts>, allowed: &[u32]) -> Vec<f64> {
        let total = counts.map_or(0.0, |c| c.total);
        let denom = total + self.epsilon * allowed.len() as f64;
        allowed
            .iter()
            .map(|t| {
                let c = counts.and_then(|c| c.next.get(t)).copied().unwrap_or(0.0);
                (c + self.epsilon) / denom
            })
            .collect()
    }

    fn counts(&self, ctx: &Context, prefix: &[u32]) -> Option<&PrefixCounts> {
        self.tables
            .get(ctx)?
            .get(prefix)
            .filter(|c| c.total > 0.0)
    }

    pub fn to_file(&self) -> FrequencyModelFile {
        let mut entries = Vec::new();
        let mut contexts: Vec<&Context> = self.tables.keys().collect();
        contexts.sort();
        for ctx in contexts {
            let mut prefixes: Vec<(&Vec<u32>, &PrefixCounts)> = self.tables[ctx].iter().collect();
            prefixes.sort_by(|a, b| a.0.cmp(b.0));
            for (prefix, counts) in prefixes {
                let mut next: Vec<(&u32, &f64)> = counts.next.iter().collect();
                next.sort_by(|a, b| a.0.cmp(b.0));
                for (&tok, &count) in next {
                    entries.push(CountEntry {
                        context: ctx.key(),
                        prefix: prefix.clone(),
                        next: tok,
                        count,
                    });
                }
            }
        }
        FrequencyModelFile {
            epsilon: self.epsilon,
            max_len: self.vocab.max_len,
            vocab: self.vocab.tokens.iter().map(|r| r.as_str().to_string()).collect(),
            entries,
        }
    }

    pub fn from_file(file: FrequencyModelFile) -> Result<Self, PlanError> {
        let tokens = file
            .vocab
            .iter()
            .map(|s| {
                if s == crate::graph::TEXT_LABEL {
                    Ok(RelationType::text())
                } else {
                    RelationType::new(s.as_str())
                }
            })
            .collect::<Result<IndexSet<_>, _>>()
            .map_err(|e| PlanError::Model(e.to_string()))?;
        let vocab = PathVocab {
            tokens,
            max_len: file.max_len.max(1),
        };
        let end = vocab.end();
        let mut tables: HashMap<Context, CountTable> = HashMap::new();
        for e in file.entries {
            let ctx = Context::parse(&e.context)
                .ok_or_else(|| PlanError::Model(format!("bad context key {:?}", e.context)))?;
            if e.next > end || e.prefix.iter().any(|&t| t >= end) {
                return Err(PlanError::Model("token id out of range".into()));
            }
            let c = tables.entry(ctx).or_default().entry(e.prefix).or_default();
            c.total += e.count;
            *c.next.entry(e.next).or_default() += e.count;
        }
        Ok(Self {
            vocab,
            epsilon: file.epsilon,
            tables,
        })
    }
}

impl StepModel for FrequencyPathModel {
    fn vocab(&self) -> &PathVocab {
        &self.vocab
    }

    fn step(&self, query: &PlanQuery, prefix: &[u32]) -> Vec<(u32, f64)> {
        let allowed = self.vocab.allowed(prefix);
        if allowed.len() == 1 {
            return vec![(allowed[0], 1.0)];
        }
        let mut groups: Vec<Vec<f64>> = Vec::with_capacity(3);
        groups.push(self.smoothed(self.counts(&Context::Global, prefix), &allowed));
        if let Some(c) = self.counts(&Context::SeedTypes(query.type_signature()), prefix) {
            groups.push(self.smoothed(Some(c), &allowed));
        }
        let keyword: Vec<Vec<f64>> = query
            .keyword_buckets()
            .into_iter()
            .filter_map(|b| self.counts(&Context::Keyword(b), prefix))
            .map(|c| self.smoothed(Some(c), &allowed))
            .collect();
        if !keyword.is_empty() {
            let k = keyword.len() as f64;
            let mut avg = vec![0.0; allowed.len()];
            for dist in &keyword {
                for (a, p) in avg.iter_mut().zip(dist) {
                    *a += p / k;
                }
            }
            groups.push(avg);
        }
        let g = groups.len() as f64;
        allowed
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, groups.iter().map(|d| d[i]).sum::<f64>() / g))
            .collect()
    }
}

impl PathModel for FrequencyPathModel {
    fn log_prob(&self, query: &PlanQuery, path: &RelationPath) -> f64 {
        sequence_log_prob(self, query, path)
    }

    fn generate(&self, query: &PlanQuery, n: usize) -> Result<Vec<ScoredPath>, PlanError> {
        Ok(best_paths(self, query, n))
    }
}

/// Serialized form of [`FrequencyPathModel`]; token ids index `vocab`, and
/// `vocab.len()` is the end-of-path token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyModelFile {
    pub epsilon: f64,
    pub max_len: usize,
    pub vocab: Vec<String>,
    pub entries: Vec<CountEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountEntry {
    pub context: String,
    pub prefix: Vec<u32>,
    pub next: u32,
    pub count: f64,
}
