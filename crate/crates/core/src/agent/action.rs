//! Parsing of `Thought n:` / `Action n:` completions.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Search(Vec<String>),
    Query(String),
    /// `Finish[unknown]` parses to a single `unknown` name; see [`Action::is_unknown`].
    Finish(Vec<String>),
}

impl Action {
    pub fn is_unknown(&self) -> bool {
        matches!(self, Action::Finish(names) if names.iter().all(|n| n.eq_ignore_ascii_case("unknown")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Search(names) => write!(f, "Search[{}]", names.join("\t")),
            Action::Query(text) => write!(f, "Query[{text}]"),
            Action::Finish(names) => write!(f, "Finish[{}]", names.join("\t")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("no Action line")]
    NoActionLine,
    #[error("unknown action {0:?}")]
    UnknownHead(String),
    #[error("action without [..] payload")]
    MissingBrackets,
    #[error("{0} with empty payload")]
    EmptyPayload(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedStep {
    pub thought: String,
    pub action: Action,
    /// The action text as written, e.g. `Search[Th. Friedrich]`.
    pub action_raw: String,
}

/// `Some(rest)` if `line` is `<label>[ n]: rest`, case-insensitively.
fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let t = line.trim_start();
    let head = t.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = t[label.len()..].trim_start_matches(|c: char| c.is_ascii_digit() || c == ' ');
    rest.strip_prefix(':').map(str::trim)
}

fn split_names(payload: &str) -> Vec<String> {
    let parts: Vec<&str> = if payload.contains('\t') {
        payload.split('\t').collect()
    } else {
        payload.split(" | ").collect()
    };
    parts
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_action_text(text: &str) -> Result<Action, ActionError> {
    let open = text.find('[').ok_or(ActionError::MissingBrackets)?;
    let close = text.rfind(']').filter(|&c| c > open).ok_or(ActionError::MissingBrackets)?;
    let head = text[..open].trim();
    let payload = &text[open + 1..close];
    if head.eq_ignore_ascii_case("search") {
        let names = split_names(payload);
        if names.is_empty() {
            return Err(ActionError::EmptyPayload("Search"));
        }
        Ok(Action::Search(names))
    } else if head.eq_ignore_ascii_case("query") {
        let q = payload.trim();
        if q.is_empty() {
            return Err(ActionError::EmptyPayload("Query"));
        }
        Ok(Action::Query(q.to_string()))
    } else if head.eq_ignore_ascii_case("finish") {
        let names = split_names(payload);
        if names.is_empty() {
            return Err(ActionError::EmptyPayload("Finish"));
        }
        Ok(Action::Finish(names))
    } else {
        Err(ActionError::UnknownHead(head.to_string()))
    }
}

/// Takes the last `Action` line and the last `Thought` block before it.
/// Without a `Thought` label, the text preceding the action is the thought.
pub fn parse_action(raw: &str) -> Result<ParsedStep, ActionError> {
    let lines: Vec<&str> = raw.lines().collect();
    let (ai, action_text) = lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| labelled(l, "action").map(|a| (i, a)))
        .ok_or(ActionError::NoActionLine)?;
    let action = parse_action_text(action_text)?;
    let thought = match (0..ai).rev().find_map(|i| labelled(lines[i], "thought").map(|t| (i, t))) {
        Some((ti, first)) => std::iter::once(first)
            .chain(lines[ti + 1..ai].iter().map(|l| l.trim()))
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" "),
        None => lines[..ai]
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" "),
    };
    Ok(ParsedStep {
        thought,
        action,
        action_raw: action_text.to_string(),
    })
}
