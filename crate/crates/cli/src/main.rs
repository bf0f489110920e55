mod config;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use semiqa_core::agent::{AgentConfig, PlanFollower, PruneMode};
use semiqa_core::embedding::{EmbeddingProvider, HashEmbedder, RemoteEmbedder};
use semiqa_core::eval::{read_dataset, run_eval, write_report, EvalOptions, EvalQuestion, Split};
use semiqa_core::graph::load_graph_files;
use semiqa_core::http::RetryPolicy;
use semiqa_core::kb::KnowledgeBase;
use semiqa_core::llm::{Cassette, ChatBackend, Limited, RemoteBackend, ScriptedBackend, API_BASE_ENV};
use semiqa_core::matcher::{Question, DEFAULT_MATCH_K};
use semiqa_core::pipeline::{plan_targets, QaPipeline};
use semiqa_core::planner::{
    build_corpus, fit_frequency_model, kl_loss, read_corpus, seed_types, write_corpus, FrequencyModelFile,
    FrequencyPathModel, LlmPlanner, ModelPlanner, OraclePlanner, PathVocab, PlanQuery, Planner, TrainingExample,
    UniformPathModel,
};

use config::{BackendKind, Config, EmbeddingKind, PlannerKind};

#[derive(Debug, Parser)]
#[command(name = "semiqa", version, about = "Plan-assisted question answering over text-attributed graphs")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Node file (JSON lines: id, type, name, text).
    #[arg(long, global = true, value_name = "PATH")]
    graph_nodes: Option<PathBuf>,
    /// Edge file (JSON lines: src, rel, dst).
    #[arg(long, global = true, value_name = "PATH")]
    graph_edges: Option<PathBuf>,
    /// Labelled questions (JSON lines: id, question, answers, split).
    #[arg(long, global = true, value_name = "PATH")]
    questions: Option<PathBuf>,
    /// Triplets kept per searched entity.
    #[arg(long, global = true, value_name = "N")]
    k: Option<usize>,
    /// Maximum agent rounds.
    #[arg(long, global = true, value_name = "N")]
    t: Option<usize>,
    /// How to rank neighbors beyond the plan: llm, plan_first or score.
    #[arg(long, global = true, value_name = "MODE")]
    prune_mode: Option<PruneMode>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Cassette to replay, or to record into with the remote backend.
    #[arg(long, global = true, value_name = "PATH")]
    cassette: Option<PathBuf>,
    /// Chat model name sent to the backend.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true, value_enum)]
    planner: Option<PlannerKind>,
    /// Fitted planner file written by `fit-planner`.
    #[arg(long, global = true, value_name = "PATH")]
    planner_model: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the graph, print statistics and refresh the embedding cache.
    Ingest {
        /// Embedding cache file (overrides graph.embedding_cache).
        #[arg(long, value_name = "PATH")]
        cache: Option<PathBuf>,
    },
    /// Print the topic nodes matched in a question.
    Match {
        question: String,
        /// Embedding fallback size.
        #[arg(long, default_value_t = DEFAULT_MATCH_K)]
        top: usize,
    },
    /// Print topic nodes and planned relation paths for a question.
    Plan { question: String },
    /// Write path-generation training examples for a split.
    Corpus {
        #[arg(long, default_value = "train")]
        split: Split,
        /// Output file; defaults to corpus.jsonl in a new run directory.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Fit the frequency planner on a corpus (or on the train split).
    FitPlanner {
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Output file; defaults to planner.json in a new run directory.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Answer one question with the full pipeline.
    Answer {
        question: String,
        /// Print every Thought/Action/Observation round.
        #[arg(long)]
        trace: bool,
    },
    /// Evaluate a split and write a report into a new run directory.
    Eval {
        #[arg(long, default_value = "test")]
        split: Split,
        /// Evaluate a seeded sample of this many questions.
        #[arg(long, value_name = "N")]
        sample: Option<usize>,
        #[arg(long, value_name = "N")]
        parallelism: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
        if src.is_some() {
            dst.clone_from(src);
        }
    };
    set(&mut cfg.graph.nodes, &cli.graph_nodes);
    set(&mut cfg.graph.edges, &cli.graph_edges);
    set(&mut cfg.graph.questions, &cli.questions);
    set(&mut cfg.backend.cassette, &cli.cassette);
    set(&mut cfg.planner.model_file, &cli.planner_model);
    set(&mut cfg.eval.out, &cli.out);
    if let Some(k) = cli.k {
        cfg.agent.k = k;
    }
    if let Some(t) = cli.t {
        cfg.agent.t = t;
    }
    if let Some(m) = cli.prune_mode {
        cfg.agent.prune_mode = m;
    }
    if let Some(b) = cli.backend {
        cfg.backend.kind = b;
    }
    if let Some(m) = &cli.model {
        cfg.backend.model.clone_from(m);
    }
    if let Some(p) = cli.planner {
        cfg.planner.kind = p;
    }
    if let Command::Eval { sample, parallelism, seed, .. } = &cli.command {
        if sample.is_some() {
            cfg.eval.sample_size = *sample;
        }
        if let Some(p) = parallelism {
            cfg.eval.parallelism = *p;
        }
        if let Some(s) = seed {
            cfg.eval.seed = *s;
        }
    }
    if let Command::Ingest { cache: Some(c) } = &cli.command {
        cfg.graph.embedding_cache = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: Config,
}

fn api_base(explicit: &Option<String>) -> Result<String> {
    match explicit {
        Some(e) => Ok(e.clone()),
        None => std::env::var(API_BASE_ENV).map_err(|_| anyhow!("no endpoint configured and {API_BASE_ENV} is not set")),
    }
}

impl Ctx {
    fn provider(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        let e = &self.cfg.embedding;
        Ok(match e.provider {
            EmbeddingKind::Hash => Arc::new(HashEmbedder::new(e.dim, e.seed)),
            EmbeddingKind::Remote => Arc::new(RemoteEmbedder::new(
                &api_base(&e.endpoint)?,
                &e.model,
                e.dim,
                std::env::var(&self.cfg.backend.key_env).ok(),
                RetryPolicy::default(),
            )),
        })
    }

    fn kb(&self) -> Result<KnowledgeBase> {
        let g = &self.cfg.graph;
        let (Some(nodes), Some(edges)) = (&g.nodes, &g.edges) else {
            bail!("graph files not configured (use --graph-nodes and --graph-edges, or [graph] in --config)");
        };
        let graph = load_graph_files(nodes, edges)?;
        let (kb, stats) = KnowledgeBase::build_cached(graph, self.provider()?, g.embedding_cache.as_deref())?;
        if g.embedding_cache.is_some() {
            eprintln!("embeddings: {} reused, {} computed", stats.reused, stats.computed);
        }
        Ok(kb)
    }

    fn dataset(&self) -> Result<Vec<EvalQuestion>> {
        let Some(path) = &self.cfg.graph.questions else {
            bail!("no question file configured (use --questions or graph.questions)");
        };
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(read_dataset(BufReader::new(file))?)
    }

    fn split(&self, split: Split) -> Result<Vec<EvalQuestion>> {
        Ok(self.dataset()?.into_iter().filter(|q| q.split == split).collect())
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        let b = &self.cfg.backend;
        Ok(match b.kind {
            BackendKind::Scripted => match &b.script {
                Some(p) => {
                    let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    Arc::new(ScriptedBackend::from_jsonl(BufReader::new(file))?)
                }
                None => Arc::new(PlanFollower),
            },
            BackendKind::Replay => {
                let path = b.cassette.as_ref().expect("validated");
                Arc::new(Cassette::replay(path)?)
            }
            BackendKind::Remote => {
                if b.model.is_empty() {
                    bail!("the remote backend needs a model name (--model or backend.model)");
                }
                let remote = RemoteBackend::new(
                    &api_base(&b.endpoint)?,
                    std::env::var(&b.key_env).ok(),
                    RetryPolicy::default(),
                );
                let limited = Limited::new(remote, self.cfg.eval.parallelism);
                match &b.cassette {
                    Some(p) => Arc::new(Cassette::record(limited, p)?),
                    None => Arc::new(limited),
                }
            }
        })
    }

    fn agent_config(&self) -> Result<AgentConfig> {
        let a = &self.cfg.agent;
        let examples = match &a.examples {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Ok(AgentConfig {
            k: a.k,
            t: a.t,
            prune_mode: a.prune_mode,
            model: self.cfg.backend.model.clone(),
            examples,
        })
    }

    fn train_corpus(&self, kb: &KnowledgeBase) -> Result<Vec<TrainingExample>> {
        let train = self.split(Split::Train)?;
        if train.is_empty() {
            bail!("no train questions to fit the planner on");
        }
        let (targets, skipped) = plan_targets(kb, &train, self.cfg.planner.max_len, DEFAULT_MATCH_K)?;
        if !skipped.is_empty() {
            eprintln!("skipped {} train questions without topic nodes", skipped.len());
        }
        Ok(build_corpus(&targets))
    }

    fn fit(&self, kb: &KnowledgeBase, corpus: &[TrainingExample]) -> Result<FrequencyPathModel> {
        let p = &self.cfg.planner;
        Ok(fit_frequency_model(corpus, &kb.graph, &kb.names, p.max_len, p.epsilon)?)
    }

    fn planner(&self, kb: &KnowledgeBase, backend: &Arc<dyn ChatBackend>, labelled: &[EvalQuestion]) -> Result<Box<dyn Planner>> {
        let p = &self.cfg.planner;
        Ok(match p.kind {
            PlannerKind::Frequency => {
                let model = match &p.model_file {
                    Some(path) => {
                        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                        let data: FrequencyModelFile = serde_json::from_reader(BufReader::new(file))
                            .with_context(|| format!("parsing {}", path.display()))?;
                        FrequencyPathModel::from_file(data)?
                    }
                    None => self.fit(kb, &self.train_corpus(kb)?)?,
                };
                Box::new(ModelPlanner::new(Box::new(model), p.n_paths))
            }
            PlannerKind::Llm => {
                let shots = if p.shots > 0 {
                    let train: Vec<EvalQuestion> = self.split(Split::Train)?.into_iter().take(p.shots).collect();
                    plan_targets(kb, &train, p.max_len, DEFAULT_MATCH_K)?
                        .0
                        .into_iter()
                        .map(|(q, t)| (q.text, t.paths[0].clone()))
                        .collect()
                } else {
                    Vec::new()
                };
                Box::new(LlmPlanner::new(Arc::clone(backend), self.cfg.backend.model.clone(), shots))
            }
            PlannerKind::Oracle => {
                let (targets, _) = plan_targets(kb, labelled, p.max_len, DEFAULT_MATCH_K)?;
                Box::new(OraclePlanner::new(targets.into_iter().map(|(_, t)| t)))
            }
        })
    }

    /// `<out>/<timestamp>-<config hash>`, created.
    fn run_dir(&self) -> Result<PathBuf> {
        let parent = self.cfg.eval.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
        let dir = parent.join(format!("{stamp}-{}", self.cfg.hash8()));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn header(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "command": command,
            "config_hash": self.cfg.hash8(),
            "config": self.cfg,
            "created": chrono::Local::now().to_rfc3339(),
        })
    }
}

/// The labelled question whose text matches `text`, for the oracle planner.
fn labelled_question(ctx: &Ctx, text: &str) -> Result<(Question, Vec<EvalQuestion>)> {
    if ctx.cfg.planner.kind != PlannerKind::Oracle {
        return Ok((Question::new("cli", text), Vec::new()));
    }
    let found = ctx
        .dataset()?
        .into_iter()
        .find(|q| q.question.trim() == text.trim())
        .ok_or_else(|| anyhow!("the oracle planner needs a question from the labelled dataset"))?;
    Ok((Question::new(found.id.clone(), found.question.clone()), vec![found]))
}

fn write_to(path: &Path, f: impl FnOnce(&mut File) -> std::io::Result<()>) -> Result<()> {
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(&mut file).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        cfg: effective_config(&cli)?,
    };
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Ingest { .. } => {
            let kb = ctx.kb()?;
            writeln!(out, "{}", kb.graph.stats())?;
        }
        Command::Match { question, top } => {
            let kb = ctx.kb()?;
            let m = kb.match_question(&question, top)?;
            writeln!(out, "method: {:?}", m.method)?;
            for n in &m.nodes {
                writeln!(out, "{}\t{}\t{:.4}", n.id, kb.graph.node(n.ix).display_name(), n.score)?;
            }
        }
        Command::Plan { question } => {
            let kb = Arc::new(ctx.kb()?);
            let backend = ctx.backend()?;
            let (q, labelled) = labelled_question(&ctx, &question)?;
            let planner = ctx.planner(&kb, &backend, &labelled)?;
            let pipeline = QaPipeline::new(Arc::clone(&kb), planner, backend, ctx.agent_config()?);
            let (matched, plan) = pipeline.plan(&q)?;
            let names: Vec<&str> = matched.nodes.iter().map(|n| kb.graph.node(n.ix).display_name()).collect();
            writeln!(out, "seeds: [{}]", names.join(", "))?;
            for p in &plan.paths {
                writeln!(out, "{:.4}\t{}", p.score, p.path)?;
            }
            if let Some(d) = &plan.diagnostic {
                eprintln!("planner output had no paths: {d}");
            }
        }
        Command::Corpus { split, output } => {
            let kb = ctx.kb()?;
            let questions = ctx.split(split)?;
            let (targets, skipped) = plan_targets(&kb, &questions, ctx.cfg.planner.max_len, DEFAULT_MATCH_K)?;
            let corpus = build_corpus(&targets);
            let path = match output {
                Some(p) => p,
                None => ctx.run_dir()?.join("corpus.jsonl"),
            };
            write_to(&path, |f| write_corpus(f, &corpus))?;
            writeln!(
                out,
                "{} examples from {} questions ({} skipped without topic nodes) -> {}",
                corpus.len(),
                targets.len(),
                skipped.len(),
                path.display()
            )?;
        }
        Command::FitPlanner { corpus, output } => {
            let kb = ctx.kb()?;
            let corpus = match corpus {
                Some(p) => {
                    let file = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    read_corpus(BufReader::new(file))?
                }
                None => ctx.train_corpus(&kb)?,
            };
            let model = ctx.fit(&kb, &corpus)?;
            // training loss against the uniform baseline, one item per example
            let items: Vec<_> = corpus
                .iter()
                .map(|ex| {
                    let text = semiqa_core::planner::question_from_prompt(&ex.prompt).unwrap_or(&ex.prompt);
                    let seeds = semiqa_core::matcher::keyword_match(text, &kb.graph, &kb.names).ixs();
                    let query = PlanQuery {
                        text: text.to_string(),
                        seed_types: seed_types(&kb.graph, &seeds),
                    };
                    let path = semiqa_core::planner::parse_path(&ex.completion).expect("corpus validated").path;
                    let target = semiqa_core::planner::PlanTarget {
                        question_id: ex.question_id.clone(),
                        seeds: Vec::new(),
                        paths: vec![path],
                    };
                    (query, target)
                })
                .collect();
            let fitted = kl_loss(&model, &items)?;
            let uniform = UniformPathModel::new(PathVocab::from_graph(&kb.graph, ctx.cfg.planner.max_len));
            let base = kl_loss(&uniform, &items)?;
            let path = match output {
                Some(p) => p,
                None => ctx.run_dir()?.join("planner.json"),
            };
            write_to(&path, |f| {
                serde_json::to_writer_pretty(&mut *f, &model.to_file())?;
                writeln!(f)
            })?;
            writeln!(
                out,
                "fitted on {} examples: loss {:.4} (uniform {:.4}) -> {}",
                corpus.len(),
                fitted.value,
                base.value,
                path.display()
            )?;
        }
        Command::Answer { question, trace } => {
            let kb = Arc::new(ctx.kb()?);
            let backend = ctx.backend()?;
            let (q, labelled) = labelled_question(&ctx, &question)?;
            let planner = ctx.planner(&kb, &backend, &labelled)?;
            let pipeline = QaPipeline::new(Arc::clone(&kb), planner, backend, ctx.agent_config()?);
            let a = pipeline.answer(&q)?;
            let names: Vec<&str> = a.matched.nodes.iter().map(|n| kb.graph.node(n.ix).display_name()).collect();
            writeln!(out, "topic: [{}]", names.join(", "))?;
            for p in &a.plan.paths {
                writeln!(out, "plan: {:.4}\t{}", p.score, p.path)?;
            }
            if trace {
                for e in &a.outcome.transcript {
                    writeln!(out, "Thought {}: {}", e.round, e.thought)?;
                    writeln!(out, "Action {}: {}", e.round, e.action_raw)?;
                    if !e.observation.is_empty() {
                        writeln!(out, "Observation {}:\n{}", e.round, e.observation)?;
                    }
                }
            }
            let status = serde_json::to_value(a.outcome.status)?;
            writeln!(
                out,
                "status: {} after {} rounds",
                status.as_str().unwrap_or_default(),
                a.outcome.rounds_used
            )?;
            for id in &a.outcome.answers {
                let name = kb.graph.node_by_id(id).map_or("", |n| n.display_name());
                writeln!(out, "answer: {id}\t{name}")?;
            }
            for d in &a.outcome.diagnostics {
                eprintln!("note: {d}");
            }
        }
        Command::Eval { split, .. } => {
            let questions = ctx.split(split)?;
            if questions.is_empty() {
                bail!("empty dataset");
            }
            let kb = Arc::new(ctx.kb()?);
            let backend = ctx.backend()?;
            let planner = ctx.planner(&kb, &backend, &questions)?;
            let pipeline = QaPipeline::new(kb, planner, backend, ctx.agent_config()?);
            let opts = EvalOptions {
                parallelism: ctx.cfg.eval.parallelism,
                sample_size: ctx.cfg.eval.sample_size,
                seed: ctx.cfg.eval.seed,
            };
            let result = run_eval(
                &questions,
                |q| {
                    pipeline
                        .answer(&Question::new(q.id.clone(), q.question.clone()))
                        .map(|a| a.outcome)
                        .map_err(|e| e.to_string())
                },
                &opts,
            )?;
            let dataset = ctx
                .cfg
                .graph
                .questions
                .as_deref()
                .and_then(Path::file_stem)
                .map_or("dataset".to_string(), |s| s.to_string_lossy().into_owned());
            let dir = ctx.run_dir()?;
            write_report(&dir, &dataset, &result, &ctx.header("eval"))?;
            write!(out, "{}", result.table(&dataset))?;
            writeln!(out, "report: {}", dir.display())?;
        }
    }
    Ok(())
}
