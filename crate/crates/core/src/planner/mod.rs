//! Plan construction: target path distributions from gold answers, the
//! reachability answer distribution, the planning loss, and pluggable path
//! generators.

mod corpus;
mod llm_paths;
mod model;

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbedError;
use crate::graph::{Graph, GraphError, NodeId, NodeIx, RelationPath, RelationType, TEXT_LABEL};
use crate::llm::{ChatBackend, LlmError};
use crate::matcher::{keyword_match, NameIndex, Question};

pub use corpus::{
    build_corpus, extract_paths, parse_path, path_prompt, question_from_prompt, read_corpus, serialize_path,
    write_corpus, CorpusError, ParsedPath, PathParseError, TrainingExample, PATH_END, PATH_SEP, PATH_START,
};
pub use llm_paths::{few_shot_prompt, llm_generate_paths, GeneratedPaths};
pub use model::{
    CountEntry, FrequencyModelFile, FrequencyPathModel, PathModel, PathVocab, PlanQuery, UniformPathModel,
    DEFAULT_EPSILON,
};

/// Paths kept from a generator when marginalizing over answers.
pub const DEFAULT_N_PATHS: usize = 3;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no topic nodes")]
    EmptySeeds,
    #[error("no gold answers")]
    EmptyGold,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("target for question {0} has no paths")]
    EmptyTarget(String),
    #[error("no plan target for question {0}")]
    UnknownQuestion(String),
    #[error("path model: {0}")]
    Model(String),
    #[error("plan cache line {line}: {message}")]
    Cache { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path: RelationPath,
    pub score: f64,
}

/// Topic nodes plus scored relation paths, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plan {
    pub seeds: Vec<NodeId>,
    pub paths: Vec<ScoredPath>,
    /// Raw generator output kept when it could not be parsed.
    pub diagnostic: Option<String>,
}

impl Plan {
    /// Drops duplicate and empty paths (first occurrence wins), clamps
    /// scores to `[0, 1]` and orders them non-increasing; equal scores keep
    /// their input order.
    pub fn new(seeds: Vec<NodeId>, paths: Vec<ScoredPath>) -> Self {
        let mut seen = BTreeSet::new();
        let mut kept: Vec<ScoredPath> = paths
            .into_iter()
            .filter(|p| !p.path.is_empty() && seen.insert(p.path.clone()))
            .map(|p| ScoredPath {
                score: if p.score.is_nan() { 0.0 } else { p.score.clamp(0.0, 1.0) },
                path: p.path,
            })
            .collect();
        kept.sort_by(|a, b| b.score.total_cmp(&a.score));
        Self {
            seeds,
            paths: kept,
            diagnostic: None,
        }
    }

    pub fn first_path(&self) -> Option<&RelationPath> {
        self.paths.first().map(|p| &p.path)
    }
}

/// The target distribution over relation paths for one question: uniform
/// over `paths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTarget {
    pub question_id: String,
    pub seeds: Vec<NodeId>,
    pub paths: Vec<RelationPath>,
}

impl PlanTarget {
    pub fn weight(&self) -> f64 {
        if self.paths.is_empty() {
            0.0
        } else {
            1.0 / self.paths.len() as f64
        }
    }

    pub fn is_text_only(&self) -> bool {
        self.paths.len() == 1 && self.paths[0].is_text_only()
    }
}

fn resolve(graph: &Graph, ids: &[NodeId]) -> Result<Vec<NodeIx>, PlanError> {
    ids.iter()
        .map(|id| graph.ix(id).ok_or_else(|| GraphError::UnknownNode(id.clone()).into()))
        .collect()
}

/// Shortest relation paths from the seeds to any gold answer, pooled across
/// answers and filtered to the shortest length found; `[text]` when no gold
/// answer is reachable within `max_len` hops.
pub fn target_distribution(
    question_id: &str,
    seeds: &[NodeId],
    gold: &[NodeId],
    graph: &Graph,
    max_len: usize,
) -> Result<PlanTarget, PlanError> {
    if seeds.is_empty() {
        return Err(PlanError::EmptySeeds);
    }
    if gold.is_empty() {
        return Err(PlanError::EmptyGold);
    }
    let seed_ix = resolve(graph, seeds)?;
    let gold_ix = resolve(graph, gold)?;
    let mut pooled: BTreeSet<RelationPath> = BTreeSet::new();
    for &a in &gold_ix {
        pooled.extend(graph.shortest_paths_ix(&seed_ix, a, max_len));
    }
    let paths = match pooled.iter().map(RelationPath::len).min() {
        Some(min) => pooled.into_iter().filter(|z| z.len() == min).collect(),
        None => vec![RelationPath::text()],
    };
    Ok(PlanTarget {
        question_id: question_id.to_string(),
        seeds: seeds.to_vec(),
        paths,
    })
}

/// Candidate answers of `path`: the reachable set for relational paths, or
/// `text_hits` (the nodes retrieved from documents) for the text plan.
pub fn answer_set(
    graph: &Graph,
    seeds: &[NodeIx],
    path: &RelationPath,
    text_hits: &[NodeIx],
) -> Result<Vec<NodeIx>, PlanError> {
    if path.is_text_only() {
        let mut v = text_hits.to_vec();
        v.sort_unstable();
        v.dedup();
        return Ok(v);
    }
    Ok(graph.reachable_ix(seeds, path)?)
}

/// Uniform probability of `answer` over the candidate set of `path`.
pub fn p_semi(
    graph: &Graph,
    seeds: &[NodeIx],
    path: &RelationPath,
    answer: NodeIx,
    text_hits: &[NodeIx],
) -> Result<f64, PlanError> {
    let set = answer_set(graph, seeds, path, text_hits)?;
    Ok(if set.binary_search(&answer).is_ok() {
        1.0 / set.len() as f64
    } else {
        0.0
    })
}

/// `sum_z p_semi(a | z) * P(z)` over the given scored paths, with path
/// scores renormalized to sum to one. Sorted by probability, then node id.
pub fn marginalize(
    graph: &Graph,
    seeds: &[NodeIx],
    paths: &[ScoredPath],
    text_hits: &[NodeIx],
) -> Result<Vec<(NodeId, f64)>, PlanError> {
    let total: f64 = paths.iter().map(|p| p.score.max(0.0)).sum();
    let mut acc: HashMap<NodeIx, f64> = HashMap::new();
    if total > 0.0 {
        for p in paths {
            let weight = p.score.max(0.0) / total;
            let set = answer_set(graph, seeds, &p.path, text_hits)?;
            if set.is_empty() || weight == 0.0 {
                continue;
            }
            let share = weight / set.len() as f64;
            for ix in set {
                *acc.entry(ix).or_default() += share;
            }
        }
    }
    let mut out: Vec<(NodeId, f64)> = acc
        .into_iter()
        .map(|(ix, p)| (graph.node(ix).id.clone(), p))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Answer marginal truncated to the model's `n_paths` most probable paths.
pub fn answer_distribution(
    model: &dyn PathModel,
    query: &PlanQuery,
    graph: &Graph,
    seeds: &[NodeIx],
    n_paths: usize,
    text_hits: &[NodeIx],
) -> Result<Vec<(NodeId, f64)>, PlanError> {
    let paths = model.generate(query, n_paths.max(1))?;
    marginalize(graph, seeds, &paths, text_hits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanLoss {
    /// `+inf` when some target path has zero model probability.
    pub value: f64,
    pub zero_probability_paths: usize,
    pub questions: usize,
}

/// Mean over questions of `-(1/|Z*|) sum_{z in Z*} log P(z | q)`, the
/// model-dependent part of the KL divergence from the target distribution.
pub fn kl_loss(model: &dyn PathModel, items: &[(PlanQuery, PlanTarget)]) -> Result<PlanLoss, PlanError> {
    if items.is_empty() {
        return Err(PlanError::EmptyCorpus);
    }
    let mut sum = 0.0;
    let mut zero = 0;
    for (query, target) in items {
        if target.paths.is_empty() {
            return Err(PlanError::EmptyTarget(target.question_id.clone()));
        }
        let w = target.weight();
        for z in &target.paths {
            let lp = model.log_prob(query, z);
            if lp == f64::NEG_INFINITY {
                zero += 1;
            }
            sum -= w * lp;
        }
    }
    Ok(PlanLoss {
        value: sum / items.len() as f64,
        zero_probability_paths: zero,
        questions: items.len(),
    })
}

/// Node types of the given seeds.
pub fn seed_types(graph: &Graph, seeds: &[NodeIx]) -> BTreeSet<String> {
    seeds.iter().map(|&s| graph.node(s).node_type.clone()).collect()
}

/// Fits a [`FrequencyPathModel`] on a training corpus. Questions are
/// recovered from the prompts; seed types come from keyword matching.
pub fn fit_frequency_model(
    corpus: &[TrainingExample],
    graph: &Graph,
    names: &NameIndex,
    max_len: usize,
    epsilon: f64,
) -> Result<FrequencyPathModel, PlanError> {
    if corpus.is_empty() {
        return Err(PlanError::EmptyCorpus);
    }
    let mut examples = Vec::with_capacity(corpus.len());
    for (i, ex) in corpus.iter().enumerate() {
        let text = question_from_prompt(&ex.prompt).unwrap_or(&ex.prompt);
        let path = parse_path(&ex.completion)
            .map_err(|e| PlanError::Model(format!("corpus example {}: {e}", i + 1)))?
            .path;
        let seeds = keyword_match(text, graph, names).ixs();
        let query = PlanQuery {
            text: text.to_string(),
            seed_types: seed_types(graph, &seeds),
        };
        examples.push((query, path));
    }
    FrequencyPathModel::fit(PathVocab::from_graph(graph, max_len), &examples, epsilon)
}

pub trait Planner: Send + Sync {
    fn plan(&self, question: &Question, graph: &Graph, seeds: &[NodeIx]) -> Result<Plan, PlanError>;
}

fn seed_ids(graph: &Graph, seeds: &[NodeIx]) -> Vec<NodeId> {
    seeds.iter().map(|&s| graph.node(s).id.clone()).collect()
}

/// Top-`n` paths of a fitted model.
pub struct ModelPlanner {
    model: Box<dyn PathModel>,
    n_paths: usize,
}

impl ModelPlanner {
    pub fn new(model: Box<dyn PathModel>, n_paths: usize) -> Self {
        Self {
            model,
            n_paths: n_paths.max(1),
        }
    }
}

impl Planner for ModelPlanner {
    fn plan(&self, question: &Question, graph: &Graph, seeds: &[NodeIx]) -> Result<Plan, PlanError> {
        let query = PlanQuery {
            text: question.text.clone(),
            seed_types: seed_types(graph, seeds),
        };
        let paths = self.model.generate(&query, self.n_paths)?;
        Ok(Plan::new(seed_ids(graph, seeds), paths))
    }
}

/// Paths generated by a chat model, zero-shot or with in-context examples.
pub struct LlmPlanner {
    backend: Arc<dyn ChatBackend>,
    model: String,
    shots: Vec<(String, RelationPath)>,
}

impl LlmPlanner {
    pub fn new(backend: Arc<dyn ChatBackend>, model: impl Into<String>, shots: Vec<(String, RelationPath)>) -> Self {
        Self {
            backend,
            model: model.into(),
            shots,
        }
    }
}

impl Planner for LlmPlanner {
    fn plan(&self, question: &Question, graph: &Graph, seeds: &[NodeIx]) -> Result<Plan, PlanError> {
        let generated = llm_generate_paths(&question.text, self.backend.as_ref(), &self.model, &self.shots)?;
        let mut plan = Plan::new(seed_ids(graph, seeds), generated.paths);
        if plan.paths.is_empty() {
            plan.diagnostic = Some(generated.raw);
        }
        Ok(plan)
    }
}

/// Returns each question's target paths with uniform scores.
#[derive(Debug, Clone, Default)]
pub struct OraclePlanner {
    targets: HashMap<String, PlanTarget>,
}

impl OraclePlanner {
    pub fn new(targets: impl IntoIterator<Item = PlanTarget>) -> Self {
        Self {
            targets: targets.into_iter().map(|t| (t.question_id.clone(), t)).collect(),
        }
    }

    pub fn insert(&mut self, target: PlanTarget) {
        self.targets.insert(target.question_id.clone(), target);
    }
}

impl Planner for OraclePlanner {
    fn plan(&self, question: &Question, graph: &Graph, seeds: &[NodeIx]) -> Result<Plan, PlanError> {
        let target = self
            .targets
            .get(&question.id)
            .ok_or_else(|| PlanError::UnknownQuestion(question.id.clone()))?;
        let w = target.weight();
        let paths = target
            .paths
            .iter()
            .map(|z| ScoredPath { path: z.clone(), score: w })
            .collect();
        Ok(Plan::new(seed_ids(graph, seeds), paths))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCacheRecord {
    pub question_id: String,
    pub seeds: Vec<String>,
    pub paths: Vec<Vec<String>>,
    pub scores: Vec<f64>,
}

impl PlanCacheRecord {
    pub fn from_plan(question_id: &str, plan: &Plan) -> Self {
        Self {
            question_id: question_id.to_string(),
            seeds: plan.seeds.iter().map(|s| s.as_str().to_string()).collect(),
            paths: plan
                .paths
                .iter()
                .map(|p| p.path.hops().iter().map(|h| h.as_str().to_string()).collect())
                .collect(),
            scores: plan.paths.iter().map(|p| p.score).collect(),
        }
    }

    pub fn to_plan(&self) -> Result<Plan, String> {
        if self.paths.len() != self.scores.len() {
            return Err(format!("{} paths but {} scores", self.paths.len(), self.scores.len()));
        }
        let mut paths = Vec::with_capacity(self.paths.len());
        for (hops, &score) in self.paths.iter().zip(&self.scores) {
            let hops = hops
                .iter()
                .map(|h| {
                    if h == TEXT_LABEL {
                        Ok(RelationType::text())
                    } else {
                        RelationType::new(h.as_str()).map_err(|e| e.to_string())
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            paths.push(ScoredPath {
                path: RelationPath::new(hops),
                score,
            });
        }
        Ok(Plan::new(self.seeds.iter().map(|s| NodeId::new(s.as_str())).collect(), paths))
    }
}

pub fn write_plan_cache<'a>(
    mut w: impl Write,
    plans: impl IntoIterator<Item = (&'a str, &'a Plan)>,
) -> std::io::Result<()> {
    for (qid, plan) in plans {
        serde_json::to_writer(&mut w, &PlanCacheRecord::from_plan(qid, plan))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_plan_cache(r: impl BufRead) -> Result<Vec<(String, Plan)>, PlanError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| PlanError::Cache { line: i + 1, message };
        let rec: PlanCacheRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let plan = rec.to_plan().map_err(err)?;
        out.push((rec.question_id, plan));
    }
    Ok(out)
}
