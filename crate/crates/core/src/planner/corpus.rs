//! Relation-path serialization (`<PATH> r1 <SEP> r2 </PATH>`) and the
//! instruction-tuning corpus built from plan targets.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{RelationPath, RelationType};
use crate::matcher::Question;

use super::PlanTarget;

pub const PATH_START: &str = "<PATH>";
pub const PATH_SEP: &str = "<SEP>";
pub const PATH_END: &str = "</PATH>";

pub(crate) const INSTRUCTION: &str =
    "Please generate a valid relation path that can be helpful for answering the following question";

/// Zero-shot path-generation prompt; also the training prompt.
pub fn path_prompt(question: &str) -> String {
    format!("{INSTRUCTION}: {question}.")
}

/// Recovers the question text from a [`path_prompt`] string.
pub fn question_from_prompt(prompt: &str) -> Option<&str> {
    prompt
        .strip_prefix(INSTRUCTION)?
        .strip_prefix(": ")?
        .strip_suffix('.')
}

pub fn serialize_path(path: &RelationPath) -> String {
    let mut out = String::from(PATH_START);
    for (i, hop) in path.hops().iter().enumerate() {
        if i > 0 {
            out.push(' ');
            out.push_str(PATH_SEP);
        }
        out.push(' ');
        out.push_str(hop.as_str());
    }
    out.push(' ');
    out.push_str(PATH_END);
    out
}

/// Parse failures carry the byte offset into the input where they were
/// detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathParseError {
    #[error("missing {PATH_START} marker")]
    MissingStart,
    #[error("unexpected text before {PATH_START} at byte {offset}")]
    LeadingText { offset: usize },
    #[error("missing {PATH_END} marker after byte {offset}")]
    MissingEnd { offset: usize },
    #[error("nested {PATH_START} at byte {offset}")]
    NestedStart { offset: usize },
    #[error("empty hop {index} at byte {offset}")]
    EmptyHop { index: usize, offset: usize },
    #[error("invalid relation label {label:?} at byte {offset}")]
    InvalidLabel { label: String, offset: usize },
    #[error("text hop mixed with relations at byte {offset}")]
    MixedText { offset: usize },
}

impl PathParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            PathParseError::MissingStart => None,
            PathParseError::LeadingText { offset }
            | PathParseError::MissingEnd { offset }
            | PathParseError::NestedStart { offset }
            | PathParseError::EmptyHop { offset, .. }
            | PathParseError::InvalidLabel { offset, .. }
            | PathParseError::MixedText { offset } => Some(*offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPath {
    pub path: RelationPath,
    /// Non-whitespace content after the end marker; ignored but reported.
    pub trailing: Option<String>,
}

/// Inverse of [`serialize_path`]. Whitespace around markers is optional;
/// the label `text` (any case) maps to the text hop.
pub fn parse_path(serialized: &str) -> Result<ParsedPath, PathParseError> {
    let lead = serialized.len() - serialized.trim_start().len();
    let rest = &serialized[lead..];
    if !rest.starts_with(PATH_START) {
        return Err(match serialized.find(PATH_START) {
            Some(_) => PathParseError::LeadingText { offset: lead },
            None => PathParseError::MissingStart,
        });
    }
    let body_start = lead + PATH_START.len();
    let Some(end_rel) = serialized[body_start..].find(PATH_END) else {
        return Err(PathParseError::MissingEnd {
            offset: serialized.len(),
        });
    };
    let body_end = body_start + end_rel;
    let body = &serialized[body_start..body_end];
    if let Some(nested) = body.find(PATH_START) {
        return Err(PathParseError::NestedStart {
            offset: body_start + nested,
        });
    }
    let mut hops = Vec::new();
    let mut cursor = body_start;
    for (index, piece) in body.split(PATH_SEP).enumerate() {
        let label = piece.trim();
        if label.is_empty() {
            return Err(PathParseError::EmptyHop { index, offset: cursor });
        }
        let label_offset = cursor + (piece.len() - piece.trim_start().len());
        let hop = if label.eq_ignore_ascii_case(crate::graph::TEXT_LABEL) {
            RelationType::text()
        } else {
            RelationType::new(label).map_err(|_| PathParseError::InvalidLabel {
                label: label.to_string(),
                offset: label_offset,
            })?
        };
        hops.push((hop, label_offset));
        cursor += piece.len() + PATH_SEP.len();
    }
    if hops.len() > 1 {
        if let Some((_, offset)) = hops.iter().find(|(h, _)| h.is_text()) {
            return Err(PathParseError::MixedText { offset: *offset });
        }
    }
    let tail = serialized[body_end + PATH_END.len()..].trim();
    Ok(ParsedPath {
        path: RelationPath::new(hops.into_iter().map(|(h, _)| h).collect()),
        trailing: (!tail.is_empty()).then(|| tail.to_string()),
    })
}

/// Every well-formed `<PATH> ... </PATH>` segment in free text, deduplicated
/// in order of appearance.
pub fn extract_paths(text: &str) -> Vec<RelationPath> {
    let mut out: Vec<RelationPath> = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(PATH_START) {
        let start = from + pos;
        let Some(end_rel) = text[start..].find(PATH_END) else {
            break;
        };
        let end = start + end_rel + PATH_END.len();
        // a later <PATH> inside the segment restarts the scan there
        let inner_restart = text[start + PATH_START.len()..end].find(PATH_START);
        match inner_restart {
            Some(r) => from = start + PATH_START.len() + r,
            None => {
                if let Ok(parsed) = parse_path(&text[start..end]) {
                    if !out.contains(&parsed.path) {
                        out.push(parsed.path);
                    }
                }
                from = end;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question_id: String,
    pub prompt: String,
    pub completion: String,
}

/// One example per (question, target path).
pub fn build_corpus(items: &[(Question, PlanTarget)]) -> Vec<TrainingExample> {
    items
        .iter()
        .flat_map(|(q, target)| {
            target.paths.iter().map(move |z| TrainingExample {
                question_id: q.id.clone(),
                prompt: path_prompt(&q.text),
                completion: serialize_path(z),
            })
        })
        .collect()
}

pub fn write_corpus(mut w: impl Write, corpus: &[TrainingExample]) -> std::io::Result<()> {
    for ex in corpus {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a corpus file, validating that every completion parses.
pub fn read_corpus(r: impl BufRead) -> Result<Vec<TrainingExample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        parse_path(&ex.completion).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}
