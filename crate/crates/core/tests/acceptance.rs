//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL/SKIP line; exits non-zero when
//! any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use common::{labels, RawGraph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semiqa_core::agent::{Agent, AgentConfig, Fact, PlanFollower, PruneMode, RunStatus};
use semiqa_core::embedding::HashEmbedder;
use semiqa_core::eval::{f1, hit_at_1, macro_f1, mrr, read_dataset, run_eval, write_report, EvalOptions, EvalQuestion, Split};
use semiqa_core::graph::{load_graph_files, GraphBuilder, NodeId, NodeIx, RelationPath, RelationType};
use semiqa_core::kb::KnowledgeBase;
use semiqa_core::llm::{Cassette, ChatBackend, ChatRequest, Completion, LlmError, RemoteBackend, ScriptedBackend, API_BASE_ENV, API_KEY_ENV};
use semiqa_core::matcher::{keyword_match, Question, DEFAULT_MATCH_K};
use semiqa_core::pipeline::{plan_targets, QaPipeline};
use semiqa_core::planner::{
    build_corpus, fit_frequency_model, kl_loss, p_semi, parse_path, read_corpus, seed_types, serialize_path,
    target_distribution, LlmPlanner, ModelPlanner, OraclePlanner, PathModel, PathVocab, Plan, PlanQuery, PlanTarget,
    ScoredPath, UniformPathModel, DEFAULT_EPSILON, DEFAULT_N_PATHS,
};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Verdict::Fail(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("planner oracle equivalence", planner_oracle_equivalence),
        ("KL identity and fit", kl_identity_and_fit),
        ("corpus round-trip", corpus_round_trip),
        ("end-to-end oracle Hit@1", end_to_end_oracle),
        ("case-study trace replay", trace_replay),
        ("metric suite", metric_suite),
        ("agent invariant suite", agent_invariants),
        ("scale smoke", scale_smoke),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Skip(d) => ("SKIP", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {} {tag} {name}: {detail} [{secs:.2}s]", i + 1);
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn planner_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut library_time = 0.0;
    let (mut pairs, mut targets, mut sets) = (0, 0, 0);
    for gi in 0..200 {
        let raw = RawGraph::random(&mut rng, 50, 5);
        let g = raw.build();
        let all: Vec<usize> = (0..raw.n).collect();
        let n_seeds = rng.gen_range(1..=raw.n.min(2));
        let seeds: Vec<usize> = all.choose_multiple(&mut rng, n_seeds).copied().collect();
        let seed_ix: Vec<NodeIx> = seeds.iter().map(|&s| g.ix_of(&RawGraph::id(s)).unwrap()).collect();
        let seed_ids: Vec<NodeId> = seeds.iter().map(|&s| NodeId::new(RawGraph::id(s))).collect();

        // oracle: enumerate every sequence once per seed set
        let walks = raw.enumerate(&seeds, 3);
        let oracle = |target: usize| -> BTreeSet<Vec<String>> {
            if seeds.contains(&target) {
                return BTreeSet::new();
            }
            let Some(min) = walks.iter().filter(|(_, s)| s.contains(&target)).map(|(q, _)| q.len()).min() else {
                return BTreeSet::new();
            };
            walks
                .iter()
                .filter(|(q, s)| q.len() == min && s.contains(&target))
                .map(|(q, _)| q.iter().map(|&h| raw.label(h)).collect())
                .collect()
        };
        for target in 0..raw.n {
            let t0 = Instant::now();
            let got = g.shortest_paths_ix(&seed_ix, g.ix_of(&RawGraph::id(target)).unwrap(), 3);
            library_time += t0.elapsed().as_secs_f64();
            let got: BTreeSet<Vec<String>> = got.iter().map(labels).collect();
            let want = oracle(target);
            ensure!(got == want, "graph {gi} seeds {seeds:?} target {target}: got {got:?}, oracle {want:?}");
            pairs += 1;
        }

        // Q over random gold sets
        for _ in 0..3 {
            let n_gold = rng.gen_range(1..=raw.n.min(3));
            let gold: Vec<usize> = all.choose_multiple(&mut rng, n_gold).copied().collect();
            let gold_ids: Vec<NodeId> = gold.iter().map(|&a| NodeId::new(RawGraph::id(a))).collect();
            let t0 = Instant::now();
            let t = target_distribution("q", &seed_ids, &gold_ids, &g, 3).unwrap();
            library_time += t0.elapsed().as_secs_f64();
            let pooled: BTreeSet<Vec<String>> = gold.iter().flat_map(|&a| oracle(a)).collect();
            let want: BTreeSet<Vec<String>> = match pooled.iter().map(Vec::len).min() {
                Some(min) => pooled.into_iter().filter(|p| p.len() == min).collect(),
                None => [vec!["text".to_string()]].into(),
            };
            let got: BTreeSet<Vec<String>> = t.paths.iter().map(labels).collect();
            ensure!(got == want, "graph {gi}: Z* {got:?} vs oracle {want:?}");
            let total: f64 = t.paths.iter().map(|_| t.weight()).sum();
            ensure!((total - 1.0).abs() <= 1e-12, "graph {gi}: Q sums to {total}");
            targets += 1;
            for z in t.paths.iter().filter(|z| !z.is_text_only()) {
                let mass: f64 = g.nodes().map(|(ix, _)| p_semi(&g, &seed_ix, z, ix, &[]).unwrap()).sum();
                ensure!((mass - 1.0).abs() <= 1e-12, "graph {gi}: P_semi over {z} sums to {mass}");
                sets += 1;
            }
        }
    }
    ensure!(library_time < 10.0, "library time {library_time:.2}s exceeds 10s");
    Verdict::Pass(format!(
        "200 graphs, {pairs} seed/target pairs exact, {targets} Q targets, {sets} P_semi sets; library time {library_time:.3}s"
    ))
}

/// A typed academic-style graph with single-token unique names.
fn synthetic_schema_graph(rng: &mut ChaCha8Rng) -> (semiqa_core::graph::Graph, Vec<String>, Vec<String>, Vec<String>) {
    let mut b = GraphBuilder::new();
    let authors: Vec<String> = (0..40).map(|i| format!("Auth{i}")).collect();
    let papers: Vec<String> = (0..80).map(|i| format!("Pap{i}")).collect();
    let venues: Vec<String> = (0..8).map(|i| format!("Ven{i}")).collect();
    let insts: Vec<String> = (0..6).map(|i| format!("Inst{i}")).collect();
    for a in &authors {
        b.node(a, "author", a, "");
    }
    for p in &papers {
        b.node(p, "paper", p, "");
    }
    for v in &venues {
        b.node(v, "venue", v, "");
    }
    for i in &insts {
        b.node(i, "institution", i, "");
    }
    for a in &authors {
        let n = rng.gen_range(1..=4);
        for p in papers.choose_multiple(rng, n) {
            b.edge(a, "writes", p);
        }
        b.edge(a, "affiliated", insts.choose(rng).unwrap());
    }
    for p in &papers {
        b.edge(p, "published_in", venues.choose(rng).unwrap());
        let n = rng.gen_range(0..=2);
        for q in papers.choose_multiple(rng, n) {
            if q != p {
                b.edge(p, "cites", q);
            }
        }
    }
    (b.build(), authors, papers, venues)
}

fn kl_identity_and_fit() -> Verdict {
    // ln 2: one relation, paths of length one, uniform over {r, text}
    let r = RelationType::new("r").unwrap();
    let half = UniformPathModel::new(PathVocab::new([r.clone()], 1));
    let single = PlanTarget {
        question_id: "q".into(),
        seeds: vec![],
        paths: vec![RelationPath::new(vec![r])],
    };
    let loss = kl_loss(&half, &[(PlanQuery::new("q"), single)]).unwrap();
    ensure!(loss.value == std::f64::consts::LN_2, "single-path loss {} is not ln 2", loss.value);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let (g, authors, papers, _) = synthetic_schema_graph(&mut rng);
    let names = semiqa_core::matcher::NameIndex::build(&g);
    let mut items: Vec<(Question, PlanTarget)> = Vec::new();
    let mut queries: Vec<(PlanQuery, PlanTarget)> = Vec::new();
    while items.len() < 500 {
        let i = items.len();
        let (text, seed) = match rng.gen_range(0..5) {
            0 => {
                let a = authors.choose(&mut rng).unwrap();
                (format!("Which papers did {a} write?"), a.clone())
            }
            1 => {
                let a = authors.choose(&mut rng).unwrap();
                (format!("Where does {a} work?"), a.clone())
            }
            2 => {
                let p = papers.choose(&mut rng).unwrap();
                (format!("In which venue did {p} appear?"), p.clone())
            }
            3 => {
                let p = papers.choose(&mut rng).unwrap();
                (format!("Which later papers cite {p}?"), p.clone())
            }
            _ => {
                let a = authors.choose(&mut rng).unwrap();
                (format!("Which venues has {a} published in?"), a.clone())
            }
        };
        let path: Vec<&str> = match text.split_whitespace().nth(1).unwrap() {
            "papers" => vec!["writes"],
            "does" => vec!["affiliated"],
            "which" => vec!["published_in"],
            "later" => vec!["inv___cites"],
            _ => vec!["writes", "published_in"],
        };
        let z = RelationPath::new(path.iter().map(|l| RelationType::new(*l).unwrap()).collect());
        let seed_id = NodeId::new(seed);
        let gold: Vec<NodeId> = g.reachable_set([&seed_id], &z).unwrap().into_iter().collect();
        if gold.is_empty() {
            continue;
        }
        let matched = keyword_match(&text, &g, &names);
        ensure!(matched.ids() == vec![seed_id.clone()], "keyword match for {text:?}: {:?}", matched.ids());
        let target = target_distribution(&format!("q{i}"), &matched.ids(), &gold, &g, 3).unwrap();
        let query = PlanQuery {
            text: text.clone(),
            seed_types: seed_types(&g, &matched.ixs()),
        };
        queries.push((query, target.clone()));
        items.push((Question::new(format!("q{i}"), text), target));
    }
    let corpus = build_corpus(&items);
    let fitted = fit_frequency_model(&corpus, &g, &names, 3, DEFAULT_EPSILON).unwrap();
    let uniform = UniformPathModel::new(PathVocab::from_graph(&g, 3));

    // identity against a direct computation
    for (label, model) in [("fitted", &fitted as &dyn PathModel), ("uniform", &uniform as &dyn PathModel)] {
        let lib = kl_loss(model, &queries).unwrap().value;
        let mut direct = 0.0;
        for (q, t) in &queries {
            let n = t.paths.len() as f64;
            direct += -t.paths.iter().map(|z| model.log_prob(q, z)).sum::<f64>() / n;
        }
        direct /= queries.len() as f64;
        ensure!((lib - direct).abs() <= 1e-12, "{label}: kl_loss {lib} vs direct {direct}");
    }
    let fit_loss = kl_loss(&fitted, &queries).unwrap();
    let uni_loss = kl_loss(&uniform, &queries).unwrap();
    ensure!(fit_loss.value.is_finite(), "fitted loss is not finite");
    ensure!(
        fit_loss.value < uni_loss.value,
        "fitted loss {} not below uniform {}",
        fit_loss.value,
        uni_loss.value
    );
    Verdict::Pass(format!(
        "ln 2 exact; identity within 1e-12; fitted {:.4} < uniform {:.4} on {} questions",
        fit_loss.value,
        uni_loss.value,
        queries.len()
    ))
}

fn random_label(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_";
    loop {
        let len = rng.gen_range(1..=12);
        let mut s: String = (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char).collect();
        if rng.gen_bool(0.2) {
            s = format!("{}___{}", s, ALPHABET[rng.gen_range(0..26)] as char);
        }
        if !s.eq_ignore_ascii_case("text") {
            return s;
        }
    }
}

fn corpus_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut paths = Vec::new();
    while paths.len() < 1000 {
        let schema: Vec<RelationType> = (0..rng.gen_range(1..=20))
            .map(|_| RelationType::new(random_label(&mut rng)).unwrap())
            .collect();
        for _ in 0..50 {
            let path = if rng.gen_bool(0.05) {
                RelationPath::text()
            } else {
                let len = rng.gen_range(1..=6);
                RelationPath::new(
                    (0..len)
                        .map(|_| {
                            let r = schema.choose(&mut rng).unwrap();
                            if rng.gen_bool(0.3) {
                                r.inverse()
                            } else {
                                r.clone()
                            }
                        })
                        .collect(),
                )
            };
            paths.push(path);
        }
    }
    paths.truncate(1000);
    for p in &paths {
        let s = serialize_path(p);
        match parse_path(&s) {
            Ok(parsed) => ensure!(&parsed.path == p && parsed.trailing.is_none(), "{s:?} parsed as {}", parsed.path),
            Err(e) => return Verdict::Fail(format!("{s:?}: {e}")),
        }
    }
    let items: Vec<(Question, PlanTarget)> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                Question::new(format!("q{i}"), format!("question {i}")),
                PlanTarget {
                    question_id: format!("q{i}"),
                    seeds: vec![],
                    paths: vec![p.clone()],
                },
            )
        })
        .collect();
    let corpus = build_corpus(&items);
    let mut buf = Vec::new();
    semiqa_core::planner::write_corpus(&mut buf, &corpus).unwrap();
    ensure!(read_corpus(buf.as_slice()).unwrap() == corpus, "corpus file did not round-trip");

    let good = serde_json::json!({"question_id": "q0", "prompt": "p", "completion": "<PATH> a </PATH>"}).to_string();
    let malformed = [
        "a <SEP> b </PATH>",
        "<PATH> a <SEP> b",
        "<PATH> a <PATH> b </PATH>",
        "<PATH> a <SEP> <SEP> b </PATH>",
        "<PATH> </PATH>",
        "<PATH> a <SEP> text </PATH>",
        "so <PATH> a </PATH>",
        "<PATH> a<b </PATH>",
        "<PATH> a <SEP> </PATH>",
        "",
    ];
    for bad in malformed {
        let err = match parse_path(bad) {
            Ok(p) => return Verdict::Fail(format!("{bad:?} accepted as {}", p.path)),
            Err(e) => e,
        };
        ensure!(err.offset().is_some() || !bad.contains("<PATH>"), "{bad:?}: no position in {err}");
        let line = serde_json::json!({"question_id": "q1", "prompt": "p", "completion": bad}).to_string();
        let file = format!("{good}\n{line}\n");
        match read_corpus(file.as_bytes()) {
            Ok(_) => return Verdict::Fail(format!("corpus with {bad:?} accepted")),
            Err(e) => ensure!(e.to_string().contains("line 2"), "{bad:?}: diagnostic {e} lacks line number"),
        }
    }
    Verdict::Pass(format!("1000 paths round-trip; {} malformed lines rejected with positions", malformed.len()))
}

struct SyntheticBench {
    kb: Arc<KnowledgeBase>,
    targets: Vec<PlanTarget>,
    questions: Vec<EvalQuestion>,
}

/// Tree schema `T0 -> T1 -> T2`, `T0 -> T3`; every parent has 1..=4
/// children over the relation unique to its type pair.
fn synthetic_bench(rng: &mut ChaCha8Rng, gi: usize, n_questions: usize) -> SyntheticBench {
    let schema = [(0usize, 1usize), (1, 2), (0, 3)];
    let type_words = ["group", "team", "member", "site"];
    let mut b = GraphBuilder::new();
    let mut by_type: Vec<Vec<String>> = vec![Vec::new(); 4];
    for (t, list) in by_type.iter_mut().enumerate() {
        for i in 0..rng.gen_range(4..=10) {
            let name = format!("G{gi}t{t}n{i}");
            b.node(&name, &format!("t{t}"), &name, &format!("a {} called {name}", type_words[t]));
            list.push(name);
        }
    }
    for &(p, c) in &schema {
        let rel = format!("t{p}_has_t{c}");
        for parent in &by_type[p] {
            let n = rng.gen_range(1..=4);
            for child in by_type[c].choose_multiple(rng, n) {
                b.edge(parent, &rel, child);
            }
        }
    }
    let g = b.build();
    let kb = Arc::new(KnowledgeBase::build(g, Arc::new(HashEmbedder::default())).unwrap());
    let plans: [&[(usize, usize)]; 4] = [&[(0, 1)], &[(1, 2)], &[(0, 3)], &[(0, 1), (1, 2)]];
    let mut targets = Vec::new();
    let mut questions = Vec::new();
    for qi in 0..n_questions {
        let hops = plans.choose(rng).unwrap();
        let start = by_type[hops[0].0].choose(rng).unwrap();
        let z = RelationPath::new(
            hops.iter()
                .map(|(p, c)| RelationType::new(format!("t{p}_has_t{c}")).unwrap())
                .collect(),
        );
        let start_id = NodeId::new(start.clone());
        let gold: Vec<NodeId> = kb.graph.reachable_set([&start_id], &z).unwrap().into_iter().collect();
        let last = hops.last().unwrap().1;
        let text = format!("Which {} entries are linked to {start} in {} steps?", type_words[last], hops.len());
        let id = format!("g{gi}q{qi}");
        let seeds = kb.match_question(&text, DEFAULT_MATCH_K).unwrap().ids();
        targets.push(target_distribution(&id, &seeds, &gold, &kb.graph, 3).unwrap());
        questions.push(EvalQuestion {
            id,
            question: text,
            answers: gold,
            split: Split::Test,
        });
    }
    SyntheticBench { kb, targets, questions }
}

fn end_to_end_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let benches: Vec<SyntheticBench> = (0..10).map(|gi| synthetic_bench(&mut rng, gi, 10)).collect();
    let config = AgentConfig {
        k: 5,
        t: 5,
        prune_mode: PruneMode::Score,
        ..AgentConfig::default()
    };
    let mut route = HashMap::new();
    let mut pipelines = Vec::new();
    let mut dataset = Vec::new();
    for (bi, b) in benches.into_iter().enumerate() {
        for q in &b.questions {
            route.insert(q.id.clone(), bi);
        }
        dataset.extend(b.questions.iter().cloned());
        pipelines.push(QaPipeline::new(
            b.kb,
            Box::new(OraclePlanner::new(b.targets)),
            Arc::new(PlanFollower),
            config.clone(),
        ));
    }
    let result = run_eval(
        &dataset,
        |q| {
            let p = &pipelines[route[&q.id]];
            p.answer(&Question::new(q.id.clone(), q.question.clone()))
                .map(|a| a.outcome)
                .map_err(|e| e.to_string())
        },
        &EvalOptions {
            parallelism: 4,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    let misses: Vec<&str> = result.per_question.iter().filter(|r| r.hit1 < 1.0).map(|r| r.id.as_str()).collect();
    ensure!(result.n == 100, "evaluated {} questions", result.n);
    ensure!(result.hit1 == 1.0, "Hit@1 {} (misses {misses:?})", result.hit1);
    ensure!(
        result.per_question.iter().all(|r| r.rounds_used <= 5),
        "a run exceeded T"
    );
    ensure!(secs < 30.0, "took {secs:.1}s");
    Verdict::Pass(format!("Hit@1 {:.4}, MRR {:.4}, macro F1 {:.4} on 100 questions", result.hit1, result.mrr, result.macro_f1))
}

const CASE_QUESTION: &str = "Show me publications by Th. Friedrich on high heat flux experiments with divertor components.";
const CASE_ANSWER: &str = "Results and consequences of high heat flux testing as quality assessment of the Wendelstein 7-X divertor";

fn mag_pipeline(backend: Arc<dyn ChatBackend>) -> QaPipeline {
    let dir = fixtures().join("mag");
    let graph = load_graph_files(&dir.join("nodes.jsonl"), &dir.join("edges.jsonl")).unwrap();
    let kb = KnowledgeBase::build(graph, Arc::new(HashEmbedder::default())).unwrap();
    let file = std::fs::File::open(dir.join("questions.jsonl")).unwrap();
    let train: Vec<EvalQuestion> = read_dataset(std::io::BufReader::new(file))
        .unwrap()
        .into_iter()
        .filter(|q| q.split == Split::Train)
        .collect();
    let (targets, _) = plan_targets(&kb, &train, 3, DEFAULT_MATCH_K).unwrap();
    let model = fit_frequency_model(&build_corpus(&targets), &kb.graph, &kb.names, 3, DEFAULT_EPSILON).unwrap();
    QaPipeline::new(
        Arc::new(kb),
        Box::new(ModelPlanner::new(Box::new(model), DEFAULT_N_PATHS)),
        backend,
        AgentConfig::default(),
    )
}

fn record_case_cassette(path: &Path) {
    let _ = std::fs::remove_file(path);
    let author = ScriptedBackend::new("Thought: Nothing more to look up.\nAction: Finish[unknown]")
        .when_contains(
            "Observation 1:",
            format!("Thought 2: The second paper is about heat flux tests on divertor parts.\nAction 2: Finish[{CASE_ANSWER}]"),
        )
        .when_contains(
            "Topic Node: [Th. Friedrich]",
            "Thought 1: The plan starts at the author, so list the author's papers.\nAction 1: Search[Th. Friedrich]",
        );
    let cassette = Cassette::record(author, path).unwrap();
    let a = mag_pipeline(Arc::new(cassette)).answer(&Question::new("case", CASE_QUESTION)).unwrap();
    assert_eq!(a.outcome.status, RunStatus::Finished);
}

fn trace_replay() -> Verdict {
    let path = fixtures().join("mag/case.cassette.jsonl");
    if std::env::var_os("SEMIQA_WRITE_FIXTURES").is_some() {
        record_case_cassette(&path);
    }
    let mut runs = Vec::new();
    for _ in 0..2 {
        let cassette = match Cassette::replay(&path) {
            Ok(c) => c,
            Err(e) => return Verdict::Fail(e.to_string()),
        };
        let p = mag_pipeline(Arc::new(cassette));
        let a = p.answer(&Question::new("case", CASE_QUESTION)).unwrap();
        let answer_id = p.kb.names.lookup(CASE_ANSWER).first().map(|&ix| p.kb.graph.node(ix).id.clone());
        ensure!(a.matched.ids() == vec![NodeId::new("a1")], "topic nodes {:?}", a.matched.ids());
        let first = a.plan.first_path().map(ToString::to_string).unwrap_or_default();
        ensure!(first == "author___writes___paper", "top plan path {first}");
        ensure!(a.outcome.status == RunStatus::Finished, "status {:?}: {:?}", a.outcome.status, a.outcome.diagnostics);
        ensure!(a.outcome.rounds_used == 2, "rounds_used {}", a.outcome.rounds_used);
        ensure!(Some(a.outcome.answers.clone()) == answer_id.map(|id| vec![id]), "answers {:?}", a.outcome.answers);
        let obs = &a.outcome.transcript[0].observation;
        let triplets: Vec<&str> = obs.lines().filter(|l| l.starts_with('(')).collect();
        ensure!(
            triplets.len() == 2 && triplets.iter().all(|l| l.contains("author___writes___paper")),
            "round 1 observation {obs:?}"
        );
        let trace: Vec<(String, String, String)> = a
            .outcome
            .transcript
            .iter()
            .map(|e| (e.thought.clone(), e.action_raw.clone(), e.observation.clone()))
            .collect();
        runs.push((trace, a.outcome.answers));
    }
    ensure!(runs[0] == runs[1], "replays differ");
    Verdict::Pass(format!("replayed twice to Finish[{CASE_ANSWER}] in 2 rounds"))
}

fn metric_suite() -> Verdict {
    let brute_hit = |p: &[NodeId], g: &[NodeId]| -> f64 {
        if !p.is_empty() && g.iter().any(|x| *x == p[0]) {
            1.0
        } else {
            0.0
        }
    };
    let brute_mrr = |p: &[NodeId], g: &[NodeId]| -> f64 {
        for (i, x) in p.iter().enumerate() {
            if g.contains(x) {
                return 1.0 / (i as f64 + 1.0);
            }
        }
        0.0
    };
    let brute_f1 = |p: &[NodeId], g: &[NodeId]| -> f64 {
        let mut pu: Vec<&NodeId> = p.iter().collect();
        pu.sort();
        pu.dedup();
        let mut gu: Vec<&NodeId> = g.iter().collect();
        gu.sort();
        gu.dedup();
        let tp = pu.iter().filter(|x| gu.contains(x)).count();
        if tp == 0 {
            return 0.0;
        }
        let (pr, rc) = (tp as f64 / pu.len() as f64, tp as f64 / gu.len() as f64);
        2.0 * pr * rc / (pr + rc)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let node = |rng: &mut ChaCha8Rng| NodeId::new(format!("v{}", rng.gen_range(0..10)));
    let mut pairs = Vec::new();
    for i in 0..1000 {
        let p: Vec<NodeId> = (0..rng.gen_range(0..6)).map(|_| node(&mut rng)).collect();
        let g: Vec<NodeId> = (0..rng.gen_range(1..5)).map(|_| node(&mut rng)).collect();
        let (h, m) = (hit_at_1(&p, &g), mrr(&p, &g));
        ensure!(h == brute_hit(&p, &g), "pair {i}: hit1");
        ensure!((m - brute_mrr(&p, &g)).abs() <= 1e-12, "pair {i}: mrr");
        ensure!((f1(&p, &g) - brute_f1(&p, &g)).abs() <= 1e-12, "pair {i}: f1");
        ensure!(h <= m, "pair {i}: hit1 > mrr");
        pairs.push((p, g));
    }
    let brute_macro: f64 = pairs.iter().map(|(p, g)| brute_f1(p, g)).sum::<f64>() / pairs.len() as f64;
    ensure!((macro_f1(&pairs) - brute_macro).abs() <= 1e-12, "macro F1");
    let worked = macro_f1(&[(vec![NodeId::new("P1")], vec![NodeId::new("P1"), NodeId::new("P2")])]);
    ensure!((worked - 0.6667).abs() <= 1e-4, "worked example {worked}");
    Verdict::Pass(format!("1000 pairs agree; worked macro F1 {worked:.4}"))
}

/// Replies chosen by hashing the request, so identical prompts always get
/// identical replies. Produces valid, malformed and nonsensical actions.
struct ChaosBackend {
    names: Vec<String>,
}

impl ChatBackend for ChaosBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        let h = req.hash();
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_str_radix(&h[..16], 16).unwrap());
        let rendered = req.rendered();
        if rendered.contains("Answer with the chosen triple numbers") {
            let picks: Vec<String> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..8).to_string()).collect();
            return Ok(Completion::text(picks.join(", ")));
        }
        let pick = |rng: &mut ChaCha8Rng| -> String {
            if rng.gen_bool(0.1) {
                "Nobody".into()
            } else {
                self.names.choose(rng).unwrap().clone()
            }
        };
        let text = match rng.gen_range(0..10) {
            0..=4 => {
                let names: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| pick(&mut rng)).collect();
                format!("Thought: look around.\nAction: Search[{}]", names.join("\t"))
            }
            5 => "Thought: read documents.\nAction: Query[document of node]".to_string(),
            6 => format!("Action: Finish[{}]", pick(&mut rng)),
            7 => "I am not sure what to do.".to_string(),
            8 => "Action: Jump[somewhere]".to_string(),
            _ => format!("Thought: maybe.\nAction: Search[{} | {}]", pick(&mut rng), pick(&mut rng)),
        };
        Ok(Completion::text(text))
    }
}

fn triplet_in_graph(raw: &RawGraph, line: &str) -> bool {
    let inner = &line[1..line.len() - 1];
    let parts: Vec<&str> = inner.split(", ").collect();
    if parts.len() != 3 {
        return false;
    }
    let ix = |name: &str| name.strip_prefix("Node ").and_then(|n| n.parse::<usize>().ok());
    let (Some(s), Some(d)) = (ix(parts[0]), ix(parts[2])) else {
        return false;
    };
    raw.edges.iter().any(|&(es, r, ed)| es == s && ed == d && raw.rels[r] == parts[1])
}

fn agent_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let mut stats = [0usize; 3];
    for run in 0..100 {
        let raw = RawGraph::random(&mut rng, 30, 4);
        let kb = KnowledgeBase::build(raw.build(), Arc::new(HashEmbedder::default())).unwrap();
        let g = &kb.graph;
        let n_seeds = rng.gen_range(1..=raw.n.min(2));
        let seeds: Vec<NodeId> = (0..raw.n)
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, n_seeds)
            .map(|&i| NodeId::new(RawGraph::id(i)))
            .collect();
        let gold = vec![NodeId::new(RawGraph::id(rng.gen_range(0..raw.n)))];
        let mut paths: Vec<ScoredPath> = target_distribution("q", &seeds, &gold, g, 3)
            .unwrap()
            .paths
            .into_iter()
            .map(|path| ScoredPath { path, score: 0.5 })
            .collect();
        if rng.gen_bool(0.3) && !raw.rels.is_empty() {
            let hop = (rng.gen_range(0..raw.rels.len()), rng.gen_bool(0.5));
            paths.push(ScoredPath {
                path: RelationPath::new(vec![RelationType::new(raw.label(hop)).unwrap()]),
                score: 0.25,
            });
        }
        let plan = Plan::new(seeds, paths);
        let config = AgentConfig {
            k: rng.gen_range(1..=5),
            t: rng.gen_range(1..=6),
            prune_mode: [PruneMode::Llm, PruneMode::PlanFirst, PruneMode::Score][rng.gen_range(0..3)],
            ..AgentConfig::default()
        };
        let chaos = ChaosBackend {
            names: (0..raw.n).map(|i| format!("Node {i}")).collect(),
        };
        let adversarial = rng.gen_bool(0.5);
        let backend: &dyn ChatBackend = if adversarial { &chaos } else { &PlanFollower };
        stats[usize::from(adversarial)] += 1;
        let question = Question::new(format!("r{run}"), "Which nodes are connected to the topic?");
        let agent = Agent::new(&kb, backend, config.clone());

        let mut traces = Vec::new();
        for _ in 0..2 {
            let mut state = agent.start(&question, &plan);
            loop {
                let frontier: Vec<NodeIx> = state.frontier().iter().copied().collect();
                let facts: Vec<Fact> = state.facts().iter().cloned().collect();
                let more = agent.step(&mut state);
                ensure!(
                    state.frontier().len() >= frontier.len()
                        && state.frontier().iter().take(frontier.len()).copied().eq(frontier.iter().copied()),
                    "run {run}: frontier not append-only"
                );
                ensure!(
                    state.facts().len() >= facts.len() && state.facts().iter().take(facts.len()).eq(facts.iter()),
                    "run {run}: facts not append-only"
                );
                ensure!(
                    state.backend_calls() <= 2 * state.round(),
                    "run {run}: {} calls in {} rounds",
                    state.backend_calls(),
                    state.round()
                );
                if !more {
                    break;
                }
            }
            ensure!(state.round() <= config.t, "run {run}: {} rounds > T", state.round());
            for fact in state.facts() {
                if let Fact::Edge(e) = fact {
                    let v = g.edge(*e);
                    let line = format!("({}, {}, {})", g.node(v.src).name, v.relation, g.node(v.dst).name);
                    ensure!(triplet_in_graph(&raw, &line), "run {run}: fact {line} not an edge");
                }
            }
            for entry in state.transcript() {
                for line in entry.observation.lines().filter(|l| l.starts_with('(')) {
                    ensure!(triplet_in_graph(&raw, line), "run {run}: observed {line} not an edge");
                }
            }
            let outcome = agent.outcome(state, 0.0);
            let trace: Vec<(usize, String, String, String)> = outcome
                .transcript
                .iter()
                .map(|e| (e.round, e.thought.clone(), e.action_raw.clone(), e.observation.clone()))
                .collect();
            traces.push((trace, outcome.answers, outcome.status, outcome.backend_calls, outcome.diagnostics));
        }
        ensure!(traces[0] == traces[1], "run {run}: not deterministic");
        stats[2] += traces[0].0.len();
    }
    Verdict::Pass(format!(
        "100 runs ({} plan-following, {} adversarial, {} rounds): append-only, calls <= 2T, sound, deterministic",
        stats[0], stats[1], stats[2]
    ))
}

fn scale_smoke() -> Verdict {
    let Some(base) = std::env::var_os(API_BASE_ENV) else {
        return Verdict::Skip(format!("{API_BASE_ENV} not set"));
    };
    let Some(sample) = std::env::var_os("SEMIQA_STARK_SAMPLE") else {
        return Verdict::Skip("SEMIQA_STARK_SAMPLE not set".into());
    };
    let dir = PathBuf::from(sample);
    let graph = match load_graph_files(&dir.join("nodes.jsonl"), &dir.join("edges.jsonl")) {
        Ok(g) => g,
        Err(e) => return Verdict::Fail(format!("loading sample: {e}")),
    };
    let kb = Arc::new(KnowledgeBase::build(graph, Arc::new(HashEmbedder::default())).unwrap());
    let file = std::fs::File::open(dir.join("questions.jsonl")).unwrap();
    let questions: Vec<EvalQuestion> = read_dataset(std::io::BufReader::new(file))
        .unwrap()
        .into_iter()
        .filter(|q| q.split == Split::Test)
        .collect();
    let model = std::env::var("SEMIQA_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let backend: Arc<dyn ChatBackend> = Arc::new(RemoteBackend::new(
        &base.to_string_lossy(),
        std::env::var(API_KEY_ENV).ok(),
        Default::default(),
    ));
    let pipeline = QaPipeline::new(
        kb,
        Box::new(LlmPlanner::new(Arc::clone(&backend), model.clone(), vec![])),
        backend,
        AgentConfig {
            model,
            ..AgentConfig::default()
        },
    );
    let result = run_eval(
        &questions,
        |q| {
            pipeline
                .answer(&Question::new(q.id.clone(), q.question.clone()))
                .map(|a| a.outcome)
                .map_err(|e| e.to_string())
        },
        &EvalOptions {
            parallelism: 4,
            sample_size: Some(50),
            seed: 0,
        },
    );
    let result = match result {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let out = std::env::temp_dir().join("semiqa-scale-smoke");
    write_report(&out, "sample", &result, &serde_json::json!({})).unwrap();
    let crashed: HashSet<&str> = result
        .per_question
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.id.as_str())
        .collect();
    ensure!(crashed.is_empty(), "pipeline errors on {crashed:?}");
    Verdict::Pass(format!("{} questions; report in {}\n{}", result.n, out.display(), result.table("sample")))
}
