//! Text embedding providers and the per-node embedding index.
//!
//! The index is built once over every node document and can be persisted to a
//! line-delimited sidecar file keyed by a content hash, so rebuilding only
//! re-embeds nodes whose document (or provider) changed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{Graph, NodeId, NodeIx};
use crate::http::{endpoint, HttpError, JsonClient, RetryPolicy};
use crate::text::tokens;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Http(#[from] HttpError),
    #[error("embedding provider returned {got} vectors for {expected} inputs")]
    Count { expected: usize, got: usize },
    #[error("embedding dimension {got} does not match provider dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl EmbedError {
    /// Whether the failure was transient and worth retrying later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Http(e) if e.is_retryable())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the provider configuration; part of the cache key.
    fn fingerprint(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop().ok_or(EmbedError::Count { expected: 1, got: 0 })
    }
}

/// Deterministic bag-of-words random-feature embedder.
///
/// Each normalized token `t` contributes a vector whose coordinate `j` is read
/// from `SHA-256(seed_le_bytes || t || block_le_bytes)` where
/// `block = j / 16`: the 32-byte digest is split into sixteen big-endian
/// `u16` words and word `j % 16` maps linearly onto `[-1, 1]`. A text's
/// embedding is the sum over its tokens, so the empty text is the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f32]) {
        for (block, chunk) in out.chunks_mut(16).enumerate() {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(token.as_bytes());
            h.update((block as u64).to_le_bytes());
            let digest = h.finalize();
            for (i, slot) in chunk.iter_mut().enumerate() {
                let word = u16::from_be_bytes([digest[2 * i], digest[2 * i + 1]]);
                *slot += (f64::from(word) / f64::from(u16::MAX) * 2.0 - 1.0) as f32;
            }
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hash:{}:{}", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut v = vec![0.0f32; self.dim];
                for tok in tokens(text) {
                    self.token_vector(&tok, &mut v);
                }
                Embedding(v)
            })
            .collect())
    }
}

/// OpenAI-compatible `/v1/embeddings` client.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: JsonClient,
    url: String,
    model: String,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, model: &str, dim: usize, api_key: Option<String>, policy: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(policy, api_key),
            url: endpoint(base_url, "/v1/embeddings"),
            model: model.to_string(),
            dim,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}:{}", self.model, self.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let body = json!({ "input": texts, "model": self.model });
        let value = self.client.post(&self.url, &body)?;
        let resp: EmbeddingsResponse =
            serde_json::from_value(value).map_err(|e| HttpError::Decode(e.to_string()))?;
        if resp.data.len() != texts.len() {
            return Err(EmbedError::Count {
                expected: texts.len(),
                got: resp.data.len(),
            });
        }
        resp.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    Err(EmbedError::Dimension {
                        expected: self.dim,
                        got: d.embedding.len(),
                    })
                } else {
                    Ok(Embedding(d.embedding))
                }
            })
            .collect()
    }
}

/// One line of the embedding cache sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct CacheRecord {
    pub node_id: NodeId,
    pub content_hash: String,
    pub vector: Embedding,
}

/// Hash of provider fingerprint and document, hex encoded.
pub fn content_hash(fingerprint: &str, document: &str) -> String {
    let mut h = Sha256::new();
    h.update(fingerprint.as_bytes());
    h.update([0u8]);
    h.update(document.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexBuildStats {
    pub reused: usize,
    pub computed: usize,
}

/// Node-document embeddings aligned with node indices.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    vectors: Vec<Embedding>,
    norms: Vec<f64>,
}

impl EmbeddingIndex {
    pub const BATCH: usize = 64;

    pub fn build(graph: &Graph, provider: &dyn EmbeddingProvider) -> Result<Self, EmbedError> {
        Self::build_cached(graph, provider, None).map(|(idx, _)| idx)
    }

    /// Builds the index, reusing and then rewriting `cache` when given.
    pub fn build_cached(
        graph: &Graph,
        provider: &dyn EmbeddingProvider,
        cache: Option<&Path>,
    ) -> Result<(Self, IndexBuildStats), EmbedError> {
        let fingerprint = provider.fingerprint();
        let dim = provider.dim();
        let hashes: Vec<String> = graph
            .nodes()
            .map(|(_, n)| content_hash(&fingerprint, n.document()))
            .collect();

        let mut cached: HashMap<NodeId, (String, Embedding)> = HashMap::new();
        if let Some(path) = cache.filter(|p| p.exists()) {
            cached = read_cache(path)?;
        }

        let mut vectors: Vec<Option<Embedding>> = vec![None; graph.node_count()];
        let mut stats = IndexBuildStats::default();
        for ((ix, node), hash) in graph.nodes().zip(&hashes) {
            if let Some((h, v)) = cached.remove(&node.id) {
                if &h == hash && v.dim() == dim {
                    vectors[ix.index()] = Some(v);
                    stats.reused += 1;
                }
            }
        }
        let missing: Vec<usize> = (0..vectors.len()).filter(|&i| vectors[i].is_none()).collect();
        stats.computed = missing.len();
        let nodes: Vec<_> = graph.nodes().map(|(_, n)| n).collect();
        let computed: Vec<Vec<Embedding>> = missing
            .par_chunks(Self::BATCH)
            .map(|chunk| {
                let docs: Vec<&str> = chunk.iter().map(|&i| nodes[i].document()).collect();
                provider.embed_batch(&docs)
            })
            .collect::<Result<_, _>>()?;
        for (i, v) in missing.iter().zip(computed.into_iter().flatten()) {
            if v.dim() != dim {
                return Err(EmbedError::Dimension { expected: dim, got: v.dim() });
            }
            vectors[*i] = Some(v);
        }
        let vectors: Vec<Embedding> = vectors.into_iter().map(|v| v.expect("filled")).collect();

        if let Some(path) = cache {
            if stats.computed > 0 || !path.exists() {
                write_cache(path, graph, &hashes, &vectors)?;
            }
        }
        Ok((Self::from_vectors(dim, vectors), stats))
    }

    pub fn from_vectors(dim: usize, vectors: Vec<Embedding>) -> Self {
        let norms = vectors.iter().map(Embedding::norm).collect();
        Self { dim, vectors, norms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, ix: NodeIx) -> &Embedding {
        &self.vectors[ix.index()]
    }

    pub fn similarity(&self, query: &Embedding, ix: NodeIx) -> f64 {
        let denom = query.norm() * self.norms[ix.index()];
        if denom == 0.0 {
            0.0
        } else {
            query.dot(&self.vectors[ix.index()]) / denom
        }
    }

    /// Top `k` nodes by cosine similarity, ties broken by ascending id.
    pub fn top_k(&self, graph: &Graph, query: &Embedding, k: usize) -> Vec<(NodeIx, f64)> {
        let qn = query.norm();
        let mut scored: Vec<(NodeIx, f64)> = self
            .vectors
            .par_iter()
            .enumerate()
            .map(|(i, v)| {
                let denom = qn * self.norms[i];
                let s = if denom == 0.0 { 0.0 } else { query.dot(v) / denom };
                (NodeIx::from_index(i), s)
            })
            .collect();
        let cmp = |a: &(NodeIx, f64), b: &(NodeIx, f64)| {
            b.1.total_cmp(&a.1)
                .then_with(|| graph.node(a.0).id.cmp(&graph.node(b.0).id))
        };
        let k = k.min(scored.len());
        if k == 0 {
            return Vec::new();
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
    }
}

fn read_cache(path: &Path) -> Result<HashMap<NodeId, (String, Embedding)>, EmbedError> {
    let err = |message: String| EmbedError::Cache {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord =
            serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        out.insert(rec.node_id, (rec.content_hash, rec.vector));
    }
    Ok(out)
}

fn write_cache(path: &Path, graph: &Graph, hashes: &[String], vectors: &[Embedding]) -> Result<(), EmbedError> {
    let err = |e: std::io::Error| EmbedError::Cache {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(err)?);
        for ((_, node), (hash, vector)) in graph.nodes().zip(hashes.iter().zip(vectors)) {
            let rec = CacheRecord {
                node_id: node.id.clone(),
                content_hash: hash.clone(),
                vector: vector.clone(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| err(e.into()))?;
            w.write_all(b"\n").map_err(err)?;
        }
        w.flush().map_err(err)?;
    }
    std::fs::rename(&tmp, path).map_err(err)
}
