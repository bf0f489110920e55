//! Match, plan, then run the agent.

use std::sync::Arc;

use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentOutcome};
use crate::embedding::EmbedError;
use crate::kb::KnowledgeBase;
use crate::llm::ChatBackend;
use crate::matcher::{MatchResult, Question, DEFAULT_MATCH_K};
use crate::eval::EvalQuestion;
use crate::planner::{target_distribution, Plan, PlanError, PlanTarget, Planner};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("matching: {0}")]
    Match(#[from] EmbedError),
    #[error("planning: {0}")]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone)]
pub struct Answer {
    pub matched: MatchResult,
    pub plan: Plan,
    pub outcome: AgentOutcome,
}

pub struct QaPipeline {
    pub kb: Arc<KnowledgeBase>,
    pub planner: Box<dyn Planner>,
    pub backend: Arc<dyn ChatBackend>,
    pub agent: AgentConfig,
    pub match_k: usize,
}

impl QaPipeline {
    pub fn new(kb: Arc<KnowledgeBase>, planner: Box<dyn Planner>, backend: Arc<dyn ChatBackend>, agent: AgentConfig) -> Self {
        Self {
            kb,
            planner,
            backend,
            agent,
            match_k: DEFAULT_MATCH_K,
        }
    }

    pub fn plan(&self, question: &Question) -> Result<(MatchResult, Plan), PipelineError> {
        let matched = self.kb.match_question(&question.text, self.match_k)?;
        let plan = self.planner.plan(question, &self.kb.graph, &matched.ixs())?;
        Ok((matched, plan))
    }

    pub fn answer(&self, question: &Question) -> Result<Answer, PipelineError> {
        let (matched, plan) = self.plan(question)?;
        let agent = Agent::new(&self.kb, self.backend.as_ref(), self.agent.clone());
        let outcome = agent.run(question, &plan);
        Ok(Answer { matched, plan, outcome })
    }
}

/// Plan targets for labelled questions, with seeds from topic matching.
/// Questions without matched seeds are skipped and their ids returned.
pub fn plan_targets(
    kb: &KnowledgeBase,
    questions: &[EvalQuestion],
    max_len: usize,
    match_k: usize,
) -> Result<(Vec<(Question, PlanTarget)>, Vec<String>), PipelineError> {
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for q in questions {
        let seeds = kb.match_question(&q.question, match_k)?.ids();
        if seeds.is_empty() {
            skipped.push(q.id.clone());
            continue;
        }
        let target = target_distribution(&q.id, &seeds, &q.answers, &kb.graph, max_len)?;
        targets.push((Question::new(q.id.clone(), q.question.clone()), target));
    }
    Ok((targets, skipped))
}
