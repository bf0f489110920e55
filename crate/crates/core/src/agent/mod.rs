//! The Thought/Action/Observation loop over the graph.

mod action;
mod follower;
mod prompt;
mod search;

use std::time::Instant;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::graph::{EdgeIx, NodeId, NodeIx, RelationPath};
use crate::kb::KnowledgeBase;
use crate::llm::{ChatBackend, ChatMessage, ChatRequest, Completion, LlmError};
use crate::matcher::Question;
use crate::planner::Plan;

pub use action::{parse_action, Action, ActionError, ParsedStep};
pub use follower::PlanFollower;
pub use prompt::{correction_prompt, prune_prompt, render_prompt, RoundText, INSTRUCTIONS};

/// Default fan-out per searched node and per query.
pub const DEFAULT_K: usize = 5;
/// Default round budget.
pub const DEFAULT_T: usize = 5;
/// Characters of node document shown per query hit.
pub const SNIPPET_CHARS: usize = 200;

/// How the non-plan remainder of a node's neighborhood is ranked before
/// truncation to K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Ask the chat backend; falls back to `Score` when that fails.
    #[default]
    Llm,
    /// Index order.
    PlanFirst,
    /// Embedding similarity of `relation neighbor-name` to the question.
    Score,
}

impl std::str::FromStr for PruneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(PruneMode::Llm),
            "plan_first" => Ok(PruneMode::PlanFirst),
            "score" => Ok(PruneMode::Score),
            other => Err(format!("unknown prune mode {other:?} (expected llm, plan_first or score)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub k: usize,
    pub t: usize,
    pub prune_mode: PruneMode,
    /// Model label passed to the chat backend.
    pub model: String,
    /// Worked examples inserted after the instructions.
    pub examples: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            t: DEFAULT_T,
            prune_mode: PruneMode::default(),
            model: String::new(),
            examples: String::new(),
        }
    }
}

/// An entry of the accumulated triplet set: a graph edge, or a node
/// returned by a text query.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Fact {
    Edge(EdgeIx),
    QueryMatch { query: String, node: NodeIx },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Finished,
    Exhausted,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub question_id: String,
    pub round: usize,
    pub thought: String,
    pub action_raw: String,
    pub observation: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    /// Empty when the agent answered `unknown` or did not finish.
    pub answers: Vec<NodeId>,
    pub rounds_used: usize,
    pub status: RunStatus,
    pub transcript: Vec<TranscriptEntry>,
    pub latency_s: f64,
    pub diagnostics: Vec<String>,
    pub backend_calls: usize,
}

/// Everything one run accumulates.
#[derive(Debug, Clone)]
pub struct AgentState {
    question: Question,
    plan: Plan,
    topic_names: Vec<String>,
    frontier: IndexSet<NodeIx>,
    facts: IndexSet<Fact>,
    /// Next unconsumed hop of each plan path.
    cursors: Vec<usize>,
    history: Vec<RoundText>,
    transcript: Vec<TranscriptEntry>,
    question_embedding: Option<Option<Embedding>>,
    status: Option<RunStatus>,
    answers: Vec<NodeId>,
    diagnostics: Vec<String>,
    backend_calls: usize,
}

impl AgentState {
    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn frontier(&self) -> &IndexSet<NodeIx> {
        &self.frontier
    }

    pub fn facts(&self) -> &IndexSet<Fact> {
        &self.facts
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.status
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls
    }

    pub fn is_done(&self) -> bool {
        self.status.is_some()
    }

    /// Plan hops the next Search prefers, one per unfinished plan path.
    pub fn next_hops(&self) -> Vec<&crate::graph::RelationType> {
        self.plan
            .paths
            .iter()
            .zip(&self.cursors)
            .filter(|(p, _)| !p.path.is_text_only())
            .filter_map(|(p, &c)| p.path.hops().get(c))
            .collect()
    }
}

pub struct Agent<'a> {
    kb: &'a KnowledgeBase,
    backend: &'a dyn ChatBackend,
    config: AgentConfig,
}

impl<'a> Agent<'a> {
    /// `k` and `t` below one are raised to one.
    pub fn new(kb: &'a KnowledgeBase, backend: &'a dyn ChatBackend, mut config: AgentConfig) -> Self {
        config.k = config.k.max(1);
        config.t = config.t.max(1);
        Self { kb, backend, config }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn start(&self, question: &Question, plan: &Plan) -> AgentState {
        let graph = &self.kb.graph;
        let mut frontier = IndexSet::new();
        let mut topic_names = Vec::new();
        let mut diagnostics = Vec::new();
        for id in &plan.seeds {
            match graph.ix(id) {
                Some(ix) => {
                    if frontier.insert(ix) {
                        topic_names.push(graph.node(ix).display_name().to_string());
                    }
                }
                None => diagnostics.push(format!("unknown topic node {id}")),
            }
        }
        AgentState {
            question: question.clone(),
            plan: plan.clone(),
            topic_names,
            frontier,
            facts: IndexSet::new(),
            cursors: vec![0; plan.paths.len()],
            history: Vec::new(),
            transcript: Vec::new(),
            question_embedding: None,
            status: None,
            answers: Vec::new(),
            diagnostics,
            backend_calls: 0,
        }
    }

    pub fn prompt(&self, state: &AgentState) -> String {
        let paths: Vec<RelationPath> = state.plan.paths.iter().map(|p| p.path.clone()).collect();
        let topics: Vec<&str> = state.topic_names.iter().map(String::as_str).collect();
        render_prompt(&self.config.examples, &state.question.text, &paths, &topics, &state.history)
    }

    fn call(&self, state: &mut AgentState, req: &ChatRequest) -> Result<Completion, LlmError> {
        state.backend_calls += 1;
        self.backend.complete(req)
    }

    /// Runs one round. Returns `false` once the run is over.
    pub fn step(&self, state: &mut AgentState) -> bool {
        if state.is_done() {
            return false;
        }
        let round = state.round() + 1;
        let started = Instant::now();
        let prompt = self.prompt(state);
        let mut req = ChatRequest::prompt(&self.config.model, prompt);

        let raw = match self.call(state, &req) {
            Ok(c) => c.text,
            Err(e) => {
                state.diagnostics.push(format!("round {round}: {e}"));
                state.status = Some(RunStatus::BackendError);
                return false;
            }
        };
        let mut reprompted = false;
        let parsed = match parse_action(&raw) {
            Ok(p) => Ok(p),
            Err(first) => {
                reprompted = true;
                state.diagnostics.push(format!("round {round}: {first}"));
                req.messages.push(ChatMessage::assistant(raw.clone()));
                req.messages.push(ChatMessage::user(correction_prompt(round)));
                match self.call(state, &req) {
                    Ok(c) => parse_action(&c.text).map_err(|e| (e, c.text)),
                    Err(e) => {
                        state.diagnostics.push(format!("round {round}: {e}"));
                        state.status = Some(RunStatus::BackendError);
                        return false;
                    }
                }
            }
        };

        let (thought, action_raw, observation) = match parsed {
            Err((e, text)) => {
                state.diagnostics.push(format!("round {round}: {e}"));
                let last = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
                (String::new(), last.to_string(), "malformed action".to_string())
            }
            Ok(step) => {
                let observation = match &step.action {
                    Action::Search(names) => search::exec_search(self, state, names, !reprompted),
                    Action::Query(text) => search::exec_query(self, state, text),
                    Action::Finish(names) => {
                        let (answers, diags) = search::resolve_finish(self.kb, state, names);
                        state.answers = answers;
                        state.diagnostics.extend(diags);
                        state.status = Some(RunStatus::Finished);
                        String::new()
                    }
                };
                (step.thought, step.action_raw, observation)
            }
        };

        state.transcript.push(TranscriptEntry {
            question_id: state.question.id.clone(),
            round,
            thought: thought.clone(),
            action_raw: action_raw.clone(),
            observation: observation.clone(),
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
        state.history.push(RoundText {
            thought,
            action: action_raw,
            observation,
        });
        if state.status.is_none() && state.round() >= self.config.t {
            state.status = Some(RunStatus::Exhausted);
        }
        !state.is_done()
    }

    pub fn outcome(&self, state: AgentState, latency_s: f64) -> AgentOutcome {
        let status = state.status.unwrap_or(RunStatus::Exhausted);
        AgentOutcome {
            answers: if status == RunStatus::Finished { state.answers } else { Vec::new() },
            rounds_used: state.history.len(),
            status,
            transcript: state.transcript,
            latency_s,
            diagnostics: state.diagnostics,
            backend_calls: state.backend_calls,
        }
    }

    pub fn run(&self, question: &Question, plan: &Plan) -> AgentOutcome {
        let started = Instant::now();
        let mut state = self.start(question, plan);
        while self.step(&mut state) {}
        self.outcome(state, started.elapsed().as_secs_f64())
    }
}
