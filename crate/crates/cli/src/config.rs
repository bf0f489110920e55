//! Run configuration: a TOML file, overridden by command-line flags.
//! Relative paths in the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use semiqa_core::agent::PruneMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub graph: GraphConfig,
    pub embedding: EmbeddingConfig,
    pub backend: BackendConfig,
    pub agent: AgentSection,
    pub planner: PlannerConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Labelled questions (`corpus`, `fit-planner`, `eval`).
    pub questions: Option<PathBuf>,
    pub embedding_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingKind,
    pub dim: usize,
    pub seed: u64,
    pub model: String,
    /// Defaults to `SEMIQA_API_BASE`.
    pub endpoint: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Hash,
            dim: semiqa_core::embedding::HashEmbedder::DEFAULT_DIM,
            seed: 0,
            model: "text-embedding-3-small".into(),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Rule file when `backend.script` is set, else the built-in plan follower.
    #[default]
    Scripted,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Defaults to `SEMIQA_API_BASE`.
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the API key.
    pub key_env: String,
    pub cassette: Option<PathBuf>,
    pub script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model: String::new(),
            key_env: semiqa_core::llm::API_KEY_ENV.into(),
            cassette: None,
            script: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub k: usize,
    pub t: usize,
    pub prune_mode: PruneMode,
    /// Worked examples inserted into the agent prompt.
    pub examples: Option<PathBuf>,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            k: semiqa_core::agent::DEFAULT_K,
            t: semiqa_core::agent::DEFAULT_T,
            prune_mode: PruneMode::default(),
            examples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    /// Fitted frequency model: `model_file`, or fitted on the train split.
    #[default]
    Frequency,
    /// Paths generated by the chat backend.
    Llm,
    /// Target paths computed from gold answers (labelled questions only).
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub model_file: Option<PathBuf>,
    pub max_len: usize,
    pub n_paths: usize,
    pub epsilon: f64,
    /// In-context examples for the LLM planner, taken from the train split.
    pub shots: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            kind: PlannerKind::Frequency,
            model_file: None,
            max_len: semiqa_core::graph::DEFAULT_MAX_PATH_LEN,
            n_paths: semiqa_core::planner::DEFAULT_N_PATHS,
            epsilon: semiqa_core::planner::DEFAULT_EPSILON,
            shots: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub parallelism: usize,
    pub sample_size: Option<usize>,
    pub seed: u64,
    /// Parent of run directories; `runs` in the working directory if unset.
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            parallelism: 4,
            sample_size: None,
            seed: 0,
            out: None,
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.graph.nodes,
            &mut cfg.graph.edges,
            &mut cfg.graph.questions,
            &mut cfg.graph.embedding_cache,
            &mut cfg.backend.cassette,
            &mut cfg.backend.script,
            &mut cfg.agent.examples,
            &mut cfg.planner.model_file,
            &mut cfg.eval.out,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    /// Counts must be positive and referenced input files must exist.
    /// Output paths (embedding cache, recorded cassettes) may be new.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("agent.k", self.agent.k),
            ("agent.t", self.agent.t),
            ("planner.max_len", self.planner.max_len),
            ("planner.n_paths", self.planner.n_paths),
            ("eval.parallelism", self.eval.parallelism),
            ("embedding.dim", self.embedding.dim),
        ] {
            if v == 0 {
                bail!("{name} must be at least 1");
            }
        }
        if !(self.planner.epsilon > 0.0) {
            bail!("planner.epsilon must be positive");
        }
        if self.eval.sample_size == Some(0) {
            bail!("eval.sample_size must be at least 1");
        }
        let inputs = [
            ("graph.nodes", &self.graph.nodes),
            ("graph.edges", &self.graph.edges),
            ("graph.questions", &self.graph.questions),
            ("backend.script", &self.backend.script),
            ("agent.examples", &self.agent.examples),
            ("planner.model_file", &self.planner.model_file),
        ];
        for (name, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name}: {} does not exist", p.display());
                }
            }
        }
        if self.backend.kind == BackendKind::Replay {
            match &self.backend.cassette {
                Some(p) if !p.exists() => bail!("backend.cassette: {} does not exist", p.display()),
                None => bail!("the replay backend needs a cassette (--cassette)"),
                _ => {}
            }
        }
        Ok(())
    }

    /// First eight hex digits of the SHA-256 of the serialized config.
    pub fn hash8(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..8].to_string()
    }
}
