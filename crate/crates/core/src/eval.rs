//! Answer metrics and dataset-level evaluation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentOutcome, RunStatus};
use crate::graph::NodeId;

/// 1 when the first prediction is a gold answer.
pub fn hit_at_1(predicted: &[NodeId], gold: &[NodeId]) -> f64 {
    match predicted.first() {
        Some(p) if gold.contains(p) => 1.0,
        _ => 0.0,
    }
}

/// Reciprocal rank of the first gold answer among the predictions.
pub fn mrr(predicted: &[NodeId], gold: &[NodeId]) -> f64 {
    predicted
        .iter()
        .position(|p| gold.contains(p))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Set F1 between predictions and gold; 0 for an empty prediction.
pub fn f1(predicted: &[NodeId], gold: &[NodeId]) -> f64 {
    let pred: HashSet<&NodeId> = predicted.iter().collect();
    let gold: HashSet<&NodeId> = gold.iter().collect();
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let tp = pred.intersection(&gold).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / pred.len() as f64;
    let r = tp / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let mut sq: Vec<f64> = values.iter().map(|x| (x - m) * (x - m)).collect();
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Per-question F1 averaged over questions.
pub fn macro_f1(pairs: &[(Vec<NodeId>, Vec<NodeId>)]) -> f64 {
    let scores: Vec<f64> = pairs.iter().map(|(p, g)| f1(p, g)).collect();
    mean(&scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(alias = "valid")]
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub id: String,
    pub question: String,
    pub answers: Vec<NodeId>,
    pub split: Split,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_dataset(r: impl BufRead) -> Result<Vec<EvalQuestion>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Line { line: i + 1, message };
        let q: EvalQuestion = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if q.answers.is_empty() {
            return Err(err(format!("question {} has no answers", q.id)));
        }
        if q.question.trim().is_empty() {
            return Err(err(format!("question {} has no text", q.id)));
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub predicted: Vec<NodeId>,
    pub gold: Vec<NodeId>,
    pub hit1: f64,
    pub reciprocal_rank: f64,
    pub f1: f64,
    pub latency_s: f64,
    pub rounds_used: usize,
    pub status: Option<RunStatus>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub hit1: f64,
    pub mrr: f64,
    pub macro_f1: f64,
    pub mean_latency_s: f64,
    pub std_latency_s: f64,
    pub n: usize,
    pub per_question: Vec<QuestionRecord>,
}

impl EvalResult {
    /// Aggregates per-question records; an empty slice gives zeros.
    pub fn from_records(per_question: Vec<QuestionRecord>) -> Self {
        let col = |f: fn(&QuestionRecord) -> f64| per_question.iter().map(f).collect::<Vec<_>>();
        let latencies = col(|r| r.latency_s);
        Self {
            hit1: mean(&col(|r| r.hit1)),
            mrr: mean(&col(|r| r.reciprocal_rank)),
            macro_f1: mean(&col(|r| r.f1)),
            mean_latency_s: mean(&latencies),
            std_latency_s: sample_std(&latencies),
            n: per_question.len(),
            per_question,
        }
    }

    /// Plain-text summary table.
    pub fn table(&self, dataset: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>9} {:>18} {:>6}", "Dataset", "Hit@1", "MRR", "Macro F1", "Latency (s)", "n");
        let _ = writeln!(
            out,
            "{:<16} {:>8.4} {:>8.4} {:>9.4} {:>18} {:>6}",
            dataset,
            self.hit1,
            self.mrr,
            self.macro_f1,
            format!("{:.2} ± {:.2}", self.mean_latency_s, self.std_latency_s),
            self.n
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub parallelism: usize,
    /// Evaluate a seeded subset of this many questions.
    pub sample_size: Option<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            sample_size: None,
            seed: 0,
        }
    }
}

/// Deterministic subset: the `n` questions with the smallest seeded hash
/// of their id, kept in dataset order.
pub fn sample_questions(dataset: &[EvalQuestion], n: usize, seed: u64) -> Vec<EvalQuestion> {
    if n >= dataset.len() {
        return dataset.to_vec();
    }
    let mut keyed: Vec<([u8; 32], usize)> = dataset
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(q.id.as_bytes());
            (h.finalize().into(), i)
        })
        .collect();
    keyed.sort();
    let mut keep: Vec<usize> = keyed.into_iter().take(n).map(|(_, i)| i).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| dataset[i].clone()).collect()
}

/// Runs `pipeline` on every question with at most `parallelism` in flight.
/// Failures and unfinished runs score zero.
pub fn run_eval<F>(dataset: &[EvalQuestion], pipeline: F, opts: &EvalOptions) -> Result<EvalResult, EvalError>
where
    F: Fn(&EvalQuestion) -> Result<AgentOutcome, String> + Sync,
{
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let questions = match opts.sample_size {
        Some(n) => sample_questions(dataset, n, opts.seed),
        None => dataset.to_vec(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let records: Vec<QuestionRecord> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| {
                let started = Instant::now();
                let result = pipeline(q);
                let latency_s = started.elapsed().as_secs_f64();
                record(q, result, latency_s)
            })
            .collect()
    });
    Ok(EvalResult::from_records(records))
}

fn record(q: &EvalQuestion, result: Result<AgentOutcome, String>, latency_s: f64) -> QuestionRecord {
    let (predicted, rounds_used, status, error) = match result {
        Ok(o) => (o.answers, o.rounds_used, Some(o.status), None),
        Err(e) => (Vec::new(), 0, None, Some(e)),
    };
    QuestionRecord {
        id: q.id.clone(),
        hit1: hit_at_1(&predicted, &q.answers),
        reciprocal_rank: mrr(&predicted, &q.answers),
        f1: f1(&predicted, &q.answers),
        predicted,
        gold: q.answers.clone(),
        latency_s,
        rounds_used,
        status,
        error,
    }
}

/// Writes `summary.json`, `per_question.jsonl` and `table.txt` into `dir`.
pub fn write_report(dir: &Path, dataset: &str, result: &EvalResult, header: &serde_json::Value) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = serde_json::json!({
        "dataset": dataset,
        "run": header,
        "hit1": result.hit1,
        "mrr": result.mrr,
        "macro_f1": result.macro_f1,
        "mean_latency_s": result.mean_latency_s,
        "std_latency_s": result.std_latency_s,
        "n": result.n,
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("per_question.jsonl"))?);
    for r in &result.per_question {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    std::fs::write(dir.join("table.txt"), result.table(dataset))
}
