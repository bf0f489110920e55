//! Topic-node matching: exact name keywords first, embedding similarity when
//! no name occurs in the question.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, EmbeddingIndex, EmbeddingProvider};
use crate::graph::{Graph, NodeId, NodeIx};
use crate::text::{normalize, tokens};

/// Default number of nodes taken by the embedding fallback.
pub const DEFAULT_MATCH_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Keyword,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedNode {
    pub ix: NodeIx,
    pub id: NodeId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub nodes: Vec<MatchedNode>,
    pub method: MatchMethod,
}

impl MatchResult {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ixs(&self) -> Vec<NodeIx> {
        self.nodes.iter().map(|m| m.ix).collect()
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|m| m.id.clone()).collect()
    }
}

/// Normalized node names to nodes. Nodes whose name normalizes to the empty
/// string are not indexed.
#[derive(Debug, Clone, Default)]
pub struct NameIndex {
    by_name: HashMap<String, Vec<NodeIx>>,
    max_tokens: usize,
}

impl NameIndex {
    pub fn build(graph: &Graph) -> Self {
        let mut by_name: HashMap<String, Vec<NodeIx>> = HashMap::new();
        let mut max_tokens = 0;
        for (ix, node) in graph.nodes() {
            let toks = tokens(&node.name);
            if toks.is_empty() {
                continue;
            }
            max_tokens = max_tokens.max(toks.len());
            by_name.entry(toks.join(" ")).or_default().push(ix);
        }
        Self { by_name, max_tokens }
    }

    /// Nodes whose normalized name equals `normalize(name)`, in insertion order.
    pub fn lookup(&self, name: &str) -> &[NodeIx] {
        self.by_name.get(&normalize(name)).map_or(&[], Vec::as_slice)
    }
}

/// Nodes whose normalized name occurs in the normalized question as a
/// contiguous token run. Overlapping candidate spans are resolved
/// longest-first, then leftmost; results follow question order.
pub fn keyword_match(question: &str, graph: &Graph, names: &NameIndex) -> MatchResult {
    let q = tokens(question);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for start in 0..q.len() {
        let longest = names.max_tokens.min(q.len() - start);
        for len in 1..=longest {
            if names.by_name.contains_key(&q[start..start + len].join(" ")) {
                spans.push((start, len));
            }
        }
    }
    spans.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut taken = vec![false; q.len()];
    let mut chosen = Vec::new();
    for (start, len) in spans {
        if taken[start..start + len].iter().any(|&t| t) {
            continue;
        }
        taken[start..start + len].iter_mut().for_each(|t| *t = true);
        chosen.push((start, len));
    }
    chosen.sort_unstable();

    let mut seen = HashSet::new();
    let mut nodes = Vec::new();
    for (start, len) in chosen {
        for &ix in &names.by_name[&q[start..start + len].join(" ")] {
            if seen.insert(ix) {
                nodes.push(MatchedNode {
                    ix,
                    id: graph.node(ix).id.clone(),
                    score: 1.0,
                });
            }
        }
    }
    MatchResult {
        nodes,
        method: MatchMethod::Keyword,
    }
}

/// Top-`k` nodes by cosine similarity between the question and node
/// documents; scores are clamped to `[0, 1]`.
pub fn similarity_match(
    question: &str,
    graph: &Graph,
    index: &EmbeddingIndex,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<MatchResult, EmbedError> {
    let nodes = if graph.node_count() == 0 {
        Vec::new()
    } else {
        let q = provider.embed(question)?;
        index
            .top_k(graph, &q, k.max(1))
            .into_iter()
            .map(|(ix, s)| MatchedNode {
                ix,
                id: graph.node(ix).id.clone(),
                score: s.clamp(0.0, 1.0),
            })
            .collect()
    };
    Ok(MatchResult {
        nodes,
        method: MatchMethod::Embedding,
    })
}

/// Keyword result when non-empty, otherwise the embedding fallback.
pub fn hybrid_match(
    question: &str,
    graph: &Graph,
    names: &NameIndex,
    index: &EmbeddingIndex,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<MatchResult, EmbedError> {
    let kw = keyword_match(question, graph, names);
    if !kw.is_empty() {
        return Ok(kw);
    }
    similarity_match(question, graph, index, provider, k)
}
