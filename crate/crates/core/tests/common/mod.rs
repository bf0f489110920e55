#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use semiqa_core::graph::{Graph, GraphBuilder};

/// A graph kept as plain edge triples so oracles can scan it without the
/// library's indices.
#[derive(Debug, Clone)]
pub struct RawGraph {
    pub n: usize,
    pub rels: Vec<String>,
    /// `(src, rel, dst)` by position.
    pub edges: Vec<(usize, usize, usize)>,
}

impl RawGraph {
    pub fn random(rng: &mut impl Rng, max_nodes: usize, max_rels: usize) -> Self {
        let n = rng.gen_range(1..=max_nodes);
        let r = rng.gen_range(1..=max_rels);
        let rels = (0..r).map(|i| format!("rel{i}")).collect();
        let m = rng.gen_range(0..=2 * n);
        let edges = (0..m)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..r), rng.gen_range(0..n)))
            .collect();
        Self { n, rels, edges }
    }

    pub fn id(i: usize) -> String {
        format!("n{i}")
    }

    pub fn build(&self) -> Graph {
        let mut b = GraphBuilder::new();
        for i in 0..self.n {
            b.node(&Self::id(i), &format!("type{}", i % 3), &format!("Node {i}"), &format!("document of node {i}"));
        }
        for &(s, r, d) in &self.edges {
            b.edge(&Self::id(s), &self.rels[r], &Self::id(d));
        }
        b.build()
    }

    /// Relations that occur on at least one edge.
    pub fn used_rels(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Label for hop `(rel, inverse)`.
    pub fn label(&self, hop: (usize, bool)) -> String {
        if hop.1 {
            format!("inv___{}", self.rels[hop.0])
        } else {
            self.rels[hop.0].clone()
        }
    }

    /// Nodes reached by following `hops` from `from`, scanning every edge.
    pub fn step(&self, from: &BTreeSet<usize>, hop: (usize, bool)) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &(s, r, d) in &self.edges {
            if r != hop.0 {
                continue;
            }
            if !hop.1 && from.contains(&s) {
                out.insert(d);
            }
            if hop.1 && from.contains(&d) {
                out.insert(s);
            }
        }
        out
    }

    pub fn reach(&self, seeds: &[usize], hops: &[(usize, bool)]) -> BTreeSet<usize> {
        let mut cur: BTreeSet<usize> = seeds.iter().copied().collect();
        for &h in hops {
            cur = self.step(&cur, h);
        }
        cur
    }

    /// Every hop sequence of length `1..=max_len` over used relations in
    /// both directions, with its reachable set.
    pub fn enumerate(&self, seeds: &[usize], max_len: usize) -> Vec<(Vec<(usize, bool)>, BTreeSet<usize>)> {
        let hops: Vec<(usize, bool)> = self
            .used_rels()
            .into_iter()
            .flat_map(|r| [(r, false), (r, true)])
            .collect();
        let mut out = Vec::new();
        let mut layer: Vec<(Vec<(usize, bool)>, BTreeSet<usize>)> = vec![(vec![], seeds.iter().copied().collect())];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for (seq, set) in &layer {
                for &h in &hops {
                    let reached = self.step(set, h);
                    let mut s = seq.clone();
                    s.push(h);
                    next.push((s, reached));
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    /// Brute-force shortest relation paths as label sequences.
    pub fn shortest(&self, seeds: &[usize], target: usize, max_len: usize) -> BTreeSet<Vec<String>> {
        if seeds.contains(&target) {
            return BTreeSet::new();
        }
        let all = self.enumerate(seeds, max_len);
        let Some(min) = all.iter().filter(|(_, s)| s.contains(&target)).map(|(q, _)| q.len()).min() else {
            return BTreeSet::new();
        };
        all.into_iter()
            .filter(|(q, s)| q.len() == min && s.contains(&target))
            .map(|(q, _)| q.into_iter().map(|h| self.label(h)).collect())
            .collect()
    }
}

pub fn labels(path: &semiqa_core::graph::RelationPath) -> Vec<String> {
    path.hops().iter().map(|h| h.as_str().to_string()).collect()
}
