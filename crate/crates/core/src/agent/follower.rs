//! A deterministic backend that reads the agent prompt and follows the first
//! plan path hop by hop.

use indexmap::IndexSet;

use crate::graph::RelationType;
use crate::llm::{ChatBackend, ChatRequest, Completion, LlmError};
use crate::planner::extract_paths;

use super::prompt::{PATHS_LABEL, PRUNE_HEADER, QUESTION_LABEL, TOPIC_LABEL};

/// Searches the current frontier along each hop of the first plan path,
/// then finishes with whatever the last hop reached. Text-only or missing
/// plans issue one Query with the question and finish with its top hit.
/// Prune requests are answered with every candidate in listed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlanFollower;

struct Parsed<'a> {
    question: &'a str,
    path: Option<Vec<RelationType>>,
    topics: Vec<&'a str>,
    observations: Vec<Vec<&'a str>>,
}

fn bracketed(s: &str) -> &str {
    s.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(s)
}

fn is_numbered(line: &str, label: &str) -> Option<usize> {
    let rest = line.strip_prefix(label)?.strip_prefix(' ')?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    if digits.is_empty() || !rest[digits.len()..].starts_with(':') {
        return None;
    }
    Some(digits.len() + label.len() + 2)
}

fn parse(prompt: &str) -> Option<Parsed<'_>> {
    let lines: Vec<&str> = prompt.lines().collect();
    let ti = lines.iter().rposition(|l| l.starts_with(TOPIC_LABEL))?;
    let qi = lines[..ti].iter().rposition(|l| l.starts_with(QUESTION_LABEL))?;
    let question = &lines[qi][QUESTION_LABEL.len()..];
    let path = lines[qi + 1..ti]
        .iter()
        .find(|l| l.starts_with(PATHS_LABEL))
        .and_then(|l| extract_paths(l).into_iter().next())
        .map(|p| p.hops().to_vec());
    let topics: Vec<&str> = bracketed(&lines[ti][TOPIC_LABEL.len()..])
        .split('\t')
        .filter(|s| !s.is_empty())
        .collect();
    let mut observations: Vec<Vec<&str>> = Vec::new();
    let mut open = false;
    for line in &lines[ti + 1..] {
        if let Some(skip) = is_numbered(line, "Observation") {
            observations.push(vec![line[skip..].trim_start()]);
            open = true;
        } else if is_numbered(line, "Thought").is_some() || is_numbered(line, "Action").is_some() {
            open = false;
        } else if open {
            observations.last_mut().expect("open block").push(line);
        }
    }
    Some(Parsed {
        question,
        path,
        topics,
        observations,
    })
}

/// Endpoints reached from `frontier` along `hop` in one observation block.
fn advance(frontier: &IndexSet<String>, hop: &RelationType, block: &[&str]) -> IndexSet<String> {
    let sep = format!(", {}, ", hop.base());
    let mut next = IndexSet::new();
    for line in block {
        let Some(inner) = line.strip_prefix('(').and_then(|l| l.strip_suffix(')')) else {
            continue;
        };
        let Some((src, dst)) = inner.split_once(&sep) else {
            continue;
        };
        let (from, to) = if hop.is_inverse() { (dst, src) } else { (src, dst) };
        if frontier.contains(from) {
            next.insert(to.to_string());
        }
    }
    next
}

fn reply(round: usize, thought: &str, action: &str) -> String {
    format!("Thought {round}: {thought}\nAction {round}: {action}")
}

fn follow(p: &Parsed<'_>) -> String {
    let round = p.observations.len() + 1;
    let Some(path) = p.path.as_ref().filter(|z| !z.iter().any(RelationType::is_text)) else {
        if p.observations.is_empty() {
            return reply(round, "The answer depends on node text.", &format!("Query[{}]", p.question));
        }
        let last = p.observations.last().expect("non-empty");
        let top = last
            .iter()
            .find_map(|l| l.strip_prefix('[').and_then(|l| l.split_once("] ").map(|(n, _)| n).or(l.strip_suffix(']'))));
        return match top {
            Some(name) => reply(round, "The best text match answers the question.", &format!("Finish[{name}]")),
            None => reply(round, "Nothing matched.", "Finish[unknown]"),
        };
    };
    let mut frontier: IndexSet<String> = p.topics.iter().map(|s| s.to_string()).collect();
    for (hop, block) in path.iter().zip(&p.observations) {
        frontier = advance(&frontier, hop, block);
    }
    let names: Vec<&str> = frontier.iter().map(String::as_str).collect();
    if names.is_empty() {
        return reply(round, "The plan reached no nodes.", "Finish[unknown]");
    }
    match path.get(p.observations.len()) {
        Some(hop) => reply(round, &format!("Follow {hop} from the current nodes."), &format!("Search[{}]", names.join("\t"))),
        None => reply(round, "The plan is complete.", &format!("Finish[{}]", names.join("\t"))),
    }
}

fn prune_reply(prompt: &str) -> String {
    let picks: Vec<&str> = prompt
        .lines()
        .filter_map(|l| l.split_once(". ").map(|(n, _)| n))
        .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
        .collect();
    picks.join(", ")
}

impl ChatBackend for PlanFollower {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        let prompt = req
            .messages
            .first()
            .map(|m| m.content.as_str())
            .ok_or_else(|| LlmError::InvalidRequest("no messages".into()))?;
        if prompt.starts_with(PRUNE_HEADER) {
            return Ok(Completion::text(prune_reply(prompt)));
        }
        let text = match parse(prompt) {
            Some(p) => follow(&p),
            None => reply(1, "The prompt has no question.", "Finish[unknown]"),
        };
        Ok(Completion::text(text))
    }
}
