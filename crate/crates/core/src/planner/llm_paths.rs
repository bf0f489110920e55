//! Relation paths from a chat model.

use crate::graph::RelationPath;
use crate::llm::{ChatBackend, ChatRequest, LlmError};

use super::corpus::{extract_paths, path_prompt, serialize_path, INSTRUCTION};
use super::ScoredPath;

/// In-context prompt: the instruction, one `<Question i>` line per example,
/// then the target question. Without examples this is the zero-shot prompt.
pub fn few_shot_prompt(question: &str, shots: &[(String, RelationPath)]) -> String {
    if shots.is_empty() {
        return path_prompt(question);
    }
    let mut out = format!("{INSTRUCTION}. Examples are listed below:\n");
    for (i, (q, z)) in shots.iter().enumerate() {
        out.push_str(&format!("<Question {}> {}: {}\n", i + 1, q, serialize_path(z)));
    }
    out.push_str(&format!("<Question> {question}:"));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPaths {
    /// Parsed paths, each scored `1/n`.
    pub paths: Vec<ScoredPath>,
    pub raw: String,
}

pub fn llm_generate_paths(
    question: &str,
    backend: &dyn ChatBackend,
    model: &str,
    shots: &[(String, RelationPath)],
) -> Result<GeneratedPaths, LlmError> {
    let req = ChatRequest::prompt(model, few_shot_prompt(question, shots));
    let raw = backend.complete(&req)?.text;
    let found = extract_paths(&raw);
    let score = if found.is_empty() { 0.0 } else { 1.0 / found.len() as f64 };
    Ok(GeneratedPaths {
        paths: found.into_iter().map(|path| ScoredPath { path, score }).collect(),
        raw,
    })
}
