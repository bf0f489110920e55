//! Execution of Search, Query and Finish against the knowledge base.

use std::collections::HashSet;

use indexmap::IndexSet;
use regex::Regex;

use crate::embedding::cosine;
use crate::graph::{Direction, EdgeIx, NodeId, NodeIx, RelationType};
use crate::kb::KnowledgeBase;
use crate::llm::ChatRequest;
use crate::text::{normalize, snippet};

use super::{prune_prompt, Agent, AgentState, Fact, PruneMode, SNIPPET_CHARS};

struct Candidate {
    edge: EdgeIx,
    outgoing: bool,
    neighbor: NodeIx,
}

struct Group {
    node: NodeIx,
    preferred: Vec<Candidate>,
    rest: Vec<Candidate>,
    chosen: Vec<usize>,
}

enum Segment {
    Unknown(String),
    Group(usize),
}

fn hop_matches(hop: &RelationType, relation: &RelationType, outgoing: bool) -> bool {
    if hop.is_inverse() {
        !outgoing && hop.base() == relation.as_str()
    } else {
        outgoing && hop == relation
    }
}

/// Nodes named `name`: frontier nodes first, then any graph node with that
/// name, then a node whose id is `name`.
fn resolve_search(kb: &KnowledgeBase, state: &AgentState, name: &str) -> Vec<NodeIx> {
    let norm = normalize(name);
    if !norm.is_empty() {
        let local: Vec<NodeIx> = state
            .frontier
            .iter()
            .copied()
            .filter(|&ix| normalize(kb.graph.node(ix).display_name()) == norm)
            .collect();
        if !local.is_empty() {
            return local;
        }
        let global = kb.names.lookup(name);
        if !global.is_empty() {
            return global.to_vec();
        }
    }
    kb.graph.ix_of(name.trim()).into_iter().collect()
}

fn triplet_line(kb: &KnowledgeBase, e: EdgeIx) -> String {
    let v = kb.graph.edge(e);
    format!(
        "({}, {}, {})",
        kb.graph.node(v.src).display_name(),
        v.relation,
        kb.graph.node(v.dst).display_name()
    )
}

fn question_embedding<'s>(agent: &Agent<'_>, state: &'s mut AgentState) -> Option<&'s crate::embedding::Embedding> {
    if state.question_embedding.is_none() {
        let e = agent.kb.provider.embed(&state.question.text).ok();
        state.question_embedding = Some(e);
    }
    state.question_embedding.as_ref().and_then(Option::as_ref)
}

/// Indices into `cands` ordered by similarity to the question, stable on
/// ties; index order when embeddings are unavailable.
fn score_order(agent: &Agent<'_>, state: &mut AgentState, cands: &[Candidate]) -> Vec<usize> {
    let kb = agent.kb;
    let texts: Vec<String> = cands
        .iter()
        .map(|c| {
            let v = kb.graph.edge(c.edge);
            format!("{} {}", v.relation, kb.graph.node(c.neighbor).display_name())
        })
        .collect();
    let Some(q) = question_embedding(agent, state).cloned() else {
        return (0..cands.len()).collect();
    };
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let Ok(vectors) = kb.provider.embed_batch(&refs) else {
        return (0..cands.len()).collect();
    };
    let scores: Vec<f64> = vectors.iter().map(|v| cosine(&q, v)).collect();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// One backend call choosing among the remainders of every group that
/// overflows its slots. Returns per-group picks, `None` where the reply
/// gave nothing usable.
fn llm_picks(agent: &Agent<'_>, state: &mut AgentState, groups: &[Group], needy: &[usize]) -> Vec<Option<Vec<usize>>> {
    let kb = agent.kb;
    let k = agent.config.k;
    let listing: Vec<(String, Vec<String>)> = needy
        .iter()
        .map(|&g| {
            let group = &groups[g];
            (
                kb.graph.node(group.node).display_name().to_string(),
                group.rest.iter().map(|c| triplet_line(kb, c.edge)).collect(),
            )
        })
        .collect();
    let req = ChatRequest::prompt(&agent.config.model, prune_prompt(&state.question.text, k, &listing));
    state.backend_calls += 1;
    let reply = match agent.backend.complete(&req) {
        Ok(c) => c.text,
        Err(e) => {
            state.diagnostics.push(format!("prune: {e}"));
            return vec![None; needy.len()];
        }
    };
    let numbers: Vec<usize> = Regex::new(r"\d+")
        .expect("static pattern")
        .find_iter(&reply)
        .filter_map(|m| m.as_str().parse().ok())
        .collect();
    let mut out = Vec::with_capacity(needy.len());
    let mut offset = 0;
    for &g in needy {
        let n = groups[g].rest.len();
        let slots = k - groups[g].chosen.len();
        let mut picks: Vec<usize> = Vec::new();
        for &x in &numbers {
            if x > offset && x <= offset + n && !picks.contains(&(x - offset - 1)) && picks.len() < slots {
                picks.push(x - offset - 1);
            }
        }
        offset += n;
        out.push((!picks.is_empty()).then_some(picks));
    }
    out
}

/// Gathers the neighborhoods of the named nodes, keeps at most K triplets
/// per node (plan-matching ones first) and records them.
pub(super) fn exec_search(agent: &Agent<'_>, state: &mut AgentState, names: &[String], allow_llm: bool) -> String {
    let kb = agent.kb;
    let graph = &kb.graph;
    let k = agent.config.k;
    let next_hops: Vec<RelationType> = state.next_hops().into_iter().cloned().collect();

    let mut segments = Vec::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut searched = HashSet::new();
    for name in names {
        let resolved = resolve_search(kb, state, name);
        if resolved.is_empty() {
            segments.push(Segment::Unknown(name.clone()));
            continue;
        }
        for ix in resolved {
            if !searched.insert(ix) {
                continue;
            }
            let mut seen = HashSet::new();
            let (mut preferred, mut rest) = (Vec::new(), Vec::new());
            for e in graph.incident_edges(ix, None, Direction::Both) {
                if !seen.insert(e) {
                    continue;
                }
                let v = graph.edge(e);
                let outgoing = v.src == ix;
                let c = Candidate {
                    edge: e,
                    outgoing,
                    neighbor: if outgoing { v.dst } else { v.src },
                };
                if next_hops.iter().any(|h| hop_matches(h, v.relation, outgoing)) {
                    preferred.push(c);
                } else {
                    rest.push(c);
                }
            }
            segments.push(Segment::Group(groups.len()));
            groups.push(Group {
                node: ix,
                preferred,
                rest,
                chosen: Vec::new(),
            });
        }
    }

    // plan-matching triplets take the first slots
    let mut needy = Vec::new();
    for (gi, g) in groups.iter_mut().enumerate() {
        g.chosen = (0..g.preferred.len().min(k)).collect();
        let slots = k - g.chosen.len();
        if slots > 0 && !g.rest.is_empty() {
            needy.push(gi);
        }
    }
    let mut rest_picks: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    let mut by_score = Vec::new();
    match agent.config.prune_mode {
        PruneMode::PlanFirst => {
            for &gi in &needy {
                let slots = k - groups[gi].chosen.len();
                rest_picks[gi] = (0..groups[gi].rest.len().min(slots)).collect();
            }
        }
        PruneMode::Score => by_score = needy.clone(),
        PruneMode::Llm => {
            let overflow: Vec<usize> = needy
                .iter()
                .copied()
                .filter(|&gi| groups[gi].rest.len() > k - groups[gi].chosen.len())
                .collect();
            for &gi in &needy {
                if !overflow.contains(&gi) {
                    rest_picks[gi] = (0..groups[gi].rest.len()).collect();
                }
            }
            if allow_llm && !overflow.is_empty() {
                for (gi, picks) in overflow.iter().zip(llm_picks(agent, state, &groups, &overflow)) {
                    match picks {
                        Some(p) => rest_picks[*gi] = p,
                        None => by_score.push(*gi),
                    }
                }
            } else {
                by_score.extend(overflow);
            }
        }
    }
    for gi in by_score {
        let slots = k - groups[gi].chosen.len();
        let order = score_order(agent, state, &groups[gi].rest);
        rest_picks[gi] = order.into_iter().take(slots).collect();
    }

    let mut retained: Vec<(EdgeIx, bool)> = Vec::new();
    let mut lines = Vec::new();
    for seg in &segments {
        match seg {
            Segment::Unknown(name) => lines.push(format!("unknown node {name}")),
            Segment::Group(gi) => {
                let g = &groups[*gi];
                let kept: Vec<&Candidate> = g
                    .chosen
                    .iter()
                    .map(|&i| &g.preferred[i])
                    .chain(rest_picks[*gi].iter().map(|&i| &g.rest[i]))
                    .collect();
                if kept.is_empty() {
                    lines.push(format!("no triples found for {}", graph.node(g.node).display_name()));
                    continue;
                }
                state.frontier.insert(g.node);
                for c in kept {
                    state.facts.insert(Fact::Edge(c.edge));
                    state.frontier.insert(c.neighbor);
                    retained.push((c.edge, c.outgoing));
                    lines.push(triplet_line(kb, c.edge));
                }
            }
        }
    }

    for (p, cursor) in state.plan.paths.iter().zip(state.cursors.iter_mut()) {
        if p.path.is_text_only() {
            continue;
        }
        if let Some(hop) = p.path.hops().get(*cursor) {
            if retained
                .iter()
                .any(|&(e, outgoing)| hop_matches(hop, graph.edge(e).relation, outgoing))
            {
                *cursor += 1;
            }
        }
    }
    lines.join("\n")
}

/// Top-K nodes by document similarity to `text`.
pub(super) fn exec_query(agent: &Agent<'_>, state: &mut AgentState, text: &str) -> String {
    let kb = agent.kb;
    let q = match kb.provider.embed(text) {
        Ok(q) => q,
        Err(e) => {
            state.diagnostics.push(format!("query: {e}"));
            return "query failed".to_string();
        }
    };
    let hits = kb.index.top_k(&kb.graph, &q, agent.config.k);
    if hits.is_empty() {
        return "no nodes found".to_string();
    }
    let mut lines = Vec::with_capacity(hits.len());
    for (ix, _) in hits {
        state.facts.insert(Fact::QueryMatch {
            query: text.to_string(),
            node: ix,
        });
        state.frontier.insert(ix);
        let node = kb.graph.node(ix);
        lines.push(format!("[{}] {}", node.display_name(), snippet(node.document(), SNIPPET_CHARS)));
    }
    lines.join("\n")
}

/// Nodes seen so far: triplet endpoints in observation order, then the
/// rest of the frontier.
fn observed_nodes(kb: &KnowledgeBase, state: &AgentState) -> IndexSet<NodeIx> {
    let mut seen = IndexSet::new();
    for f in &state.facts {
        match f {
            Fact::Edge(e) => {
                let v = kb.graph.edge(*e);
                seen.insert(v.src);
                seen.insert(v.dst);
            }
            Fact::QueryMatch { node, .. } => {
                seen.insert(*node);
            }
        }
    }
    seen.extend(state.frontier.iter().copied());
    seen
}

/// Maps answer names to node ids: observed nodes first, then the whole
/// graph, then ids. `unknown` and unresolvable names are dropped.
pub(super) fn resolve_finish(kb: &KnowledgeBase, state: &AgentState, names: &[String]) -> (Vec<NodeId>, Vec<String>) {
    let observed = observed_nodes(kb, state);
    let mut out: IndexSet<NodeIx> = IndexSet::new();
    let mut diagnostics = Vec::new();
    for name in names {
        if name.trim().eq_ignore_ascii_case("unknown") {
            continue;
        }
        let norm = normalize(name);
        let mut hits: Vec<NodeIx> = if norm.is_empty() {
            Vec::new()
        } else {
            observed
                .iter()
                .copied()
                .filter(|&ix| normalize(kb.graph.node(ix).display_name()) == norm)
                .collect()
        };
        if hits.is_empty() && !norm.is_empty() {
            hits = kb.names.lookup(name).to_vec();
        }
        if hits.is_empty() {
            hits.extend(kb.graph.ix_of(name.trim()));
        }
        if hits.is_empty() {
            diagnostics.push(format!("unresolved answer {name:?}"));
        }
        out.extend(hits);
    }
    (out.into_iter().map(|ix| kb.graph.node(ix).id.clone()).collect(), diagnostics)
}
