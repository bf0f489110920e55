use std::path::Path;
use std::sync::Arc;

use crate::embedding::{EmbedError, EmbeddingIndex, EmbeddingProvider, IndexBuildStats};
use crate::graph::Graph;
use crate::matcher::{hybrid_match, MatchResult, NameIndex};

/// A loaded graph with its name index, node-document embeddings and the
/// provider those embeddings came from.
pub struct KnowledgeBase {
    pub graph: Graph,
    pub names: NameIndex,
    pub index: EmbeddingIndex,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl KnowledgeBase {
    pub fn build(graph: Graph, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, EmbedError> {
        Ok(Self::build_cached(graph, provider, None)?.0)
    }

    /// Like [`KnowledgeBase::build`], reusing and refreshing an embedding
    /// cache file when one is given.
    pub fn build_cached(
        graph: Graph,
        provider: Arc<dyn EmbeddingProvider>,
        cache: Option<&Path>,
    ) -> Result<(Self, IndexBuildStats), EmbedError> {
        let names = NameIndex::build(&graph);
        let (index, stats) = EmbeddingIndex::build_cached(&graph, provider.as_ref(), cache)?;
        Ok((
            Self {
                graph,
                names,
                index,
                provider,
            },
            stats,
        ))
    }

    pub fn match_question(&self, question: &str, k: usize) -> Result<MatchResult, EmbedError> {
        hybrid_match(question, &self.graph, &self.names, &self.index, self.provider.as_ref(), k)
    }
}
