//! Text-attributed heterogeneous graph: typed nodes carrying documents, typed
//! directed edges, and adjacency indices in both directions.
//!
//! Nodes and edges are addressed internally by dense indices ([`NodeIx`],
//! [`EdgeIx`]) assigned in insertion order; the public string identifiers
//! ([`NodeId`], [`RelationType`]) are kept for I/O and display.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved label for the pseudo-relation meaning "answer from node text".
pub const TEXT_LABEL: &str = "text";

/// Prefix that marks a hop traversed against edge direction.
pub const INVERSE_PREFIX: &str = "inv___";

/// Default bound on relation-path length.
pub const DEFAULT_MAX_PATH_LEN: usize = 3;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed {source_name} record at line {line}: {message}")]
    Malformed {
        source_name: &'static str,
        line: usize,
        message: String,
    },
    #[error("unknown node {id} at line {line}")]
    UnknownNodeAt { id: String, line: usize },
    #[error("duplicate node id {id} at line {line}")]
    DuplicateNode { id: String, line: usize },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid relation label {label:?}: {reason}")]
    InvalidRelation { label: String, reason: &'static str },
    #[error("relation path contains a text hop; use text retrieval instead")]
    TextHop,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// An edge type label, an inverse traversal of one (`inv___` prefix), or the
/// reserved `text` pseudo-type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct RelationType(String);

impl RelationType {
    /// Validates a label. Labels must be non-empty, carry no surrounding
    /// whitespace, and contain no path markers or control characters so
    /// that they survive serialization inside `<PATH> ... </PATH>`.
    pub fn new(label: impl Into<String>) -> Result<Self, GraphError> {
        let label = label.into();
        let reason = if label.is_empty() {
            Some("empty label")
        } else if label.trim() != label {
            Some("surrounding whitespace")
        } else if label.contains('<') || label.contains('>') {
            Some("angle brackets are reserved for path markers")
        } else if label.chars().any(char::is_control) {
            Some("control character")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(GraphError::InvalidRelation { label, reason }),
            None => Ok(Self(label)),
        }
    }

    pub fn text() -> Self {
        Self(TEXT_LABEL.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_text(&self) -> bool {
        self.0 == TEXT_LABEL
    }

    pub fn is_inverse(&self) -> bool {
        self.0.starts_with(INVERSE_PREFIX) && self.0.len() > INVERSE_PREFIX.len()
    }

    /// The stored edge label this hop traverses.
    pub fn base(&self) -> &str {
        if self.is_inverse() {
            &self.0[INVERSE_PREFIX.len()..]
        } else {
            &self.0
        }
    }

    /// Same edge label, opposite direction.
    pub fn inverse(&self) -> Self {
        if self.is_inverse() {
            Self(self.base().to_string())
        } else {
            Self(format!("{INVERSE_PREFIX}{}", self.0))
        }
    }
}

impl<'de> Deserialize<'de> for RelationType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        RelationType::new(s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered sequence of relation hops.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationPath(Vec<RelationType>);

impl RelationPath {
    pub fn new(hops: Vec<RelationType>) -> Self {
        Self(hops)
    }

    /// The text-only plan.
    pub fn text() -> Self {
        Self(vec![RelationType::text()])
    }

    pub fn hops(&self) -> &[RelationType] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_text(&self) -> bool {
        self.0.iter().any(RelationType::is_text)
    }

    /// True for the pure `[text]` plan.
    pub fn is_text_only(&self) -> bool {
        !self.0.is_empty() && self.0.iter().all(RelationType::is_text)
    }
}

impl fmt::Display for RelationPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, hop) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            f.write_str(hop.as_str())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub text: String,
}

impl Node {
    /// Name for display and prompt rendering; falls back to the id.
    pub fn display_name(&self) -> &str {
        if self.name.is_empty() {
            self.id.as_str()
        } else {
            &self.name
        }
    }

    /// The document used for embedding retrieval.
    pub fn document(&self) -> &str {
        if self.text.is_empty() {
            &self.name
        } else {
            &self.text
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub src: NodeId,
    pub relation: RelationType,
    pub dst: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIx(u32);

impl NodeIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self(i as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeIx(u32);

impl EdgeIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Out,
    In,
    Both,
}

#[derive(Debug, Clone, Copy)]
struct EdgeRec {
    src: u32,
    rel: u32,
    dst: u32,
}

/// Borrowed view of one stored edge.
#[derive(Debug, Clone, Copy)]
pub struct EdgeView<'g> {
    pub id: EdgeIx,
    pub src: NodeIx,
    pub relation: &'g RelationType,
    pub dst: NodeIx,
}

/// Compressed adjacency: per node, the incident edge ids sorted by
/// (relation, insertion order).
#[derive(Debug, Default)]
struct Adjacency {
    offsets: Vec<usize>,
    edges: Vec<u32>,
}

impl Adjacency {
    fn build(node_count: usize, edges: &[EdgeRec], endpoint: impl Fn(&EdgeRec) -> u32) -> Self {
        let mut counts = vec![0usize; node_count + 1];
        for e in edges {
            counts[endpoint(e) as usize + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut slots = vec![0u32; edges.len()];
        for (eid, e) in edges.iter().enumerate() {
            let n = endpoint(e) as usize;
            slots[cursor[n]] = eid as u32;
            cursor[n] += 1;
        }
        for n in 0..node_count {
            // stable: equal relations keep insertion order
            slots[offsets[n]..offsets[n + 1]].sort_by_key(|&eid| edges[eid as usize].rel);
        }
        Self {
            offsets,
            edges: slots,
        }
    }

    fn of(&self, node: u32) -> &[u32] {
        let n = node as usize;
        &self.edges[self.offsets[n]..self.offsets[n + 1]]
    }

    fn of_relation<'a>(&'a self, node: u32, rel: u32, edges: &[EdgeRec]) -> &'a [u32] {
        let all = self.of(node);
        let lo = all.partition_point(|&e| edges[e as usize].rel < rel);
        let hi = all.partition_point(|&e| edges[e as usize].rel <= rel);
        &all[lo..hi]
    }
}

/// Incremental constructor; [`GraphBuilder::build`] produces the indexed graph.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<NodeId, u32>,
    relations: IndexSet<RelationType>,
    edges: Vec<EdgeRec>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: Node) -> Result<NodeIx, GraphError> {
        if node.id.as_str().is_empty() {
            return Err(GraphError::Malformed {
                source_name: "nodes",
                line: self.nodes.len() + 1,
                message: "empty node id".into(),
            });
        }
        if self.index.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode {
                id: node.id.to_string(),
                line: self.nodes.len() + 1,
            });
        }
        let ix = self.nodes.len() as u32;
        self.index.insert(node.id.clone(), ix);
        self.nodes.push(node);
        Ok(NodeIx(ix))
    }

    /// Convenience for tests and fixtures.
    pub fn node(&mut self, id: &str, node_type: &str, name: &str, text: &str) -> NodeIx {
        self.add_node(Node {
            id: NodeId::new(id),
            node_type: node_type.into(),
            name: name.into(),
            text: text.into(),
        })
        .expect("fixture node")
    }

    pub fn add_edge(&mut self, src: &NodeId, relation: &str, dst: &NodeId) -> Result<EdgeIx, GraphError> {
        let rel = stored_relation(relation)?;
        let s = *self
            .index
            .get(src)
            .ok_or_else(|| GraphError::UnknownNode(src.clone()))?;
        let d = *self
            .index
            .get(dst)
            .ok_or_else(|| GraphError::UnknownNode(dst.clone()))?;
        let (r, _) = self.relations.insert_full(rel);
        self.edges.push(EdgeRec {
            src: s,
            rel: r as u32,
            dst: d,
        });
        Ok(EdgeIx(self.edges.len() as u32 - 1))
    }

    pub fn edge(&mut self, src: &str, relation: &str, dst: &str) -> EdgeIx {
        self.add_edge(&NodeId::new(src), relation, &NodeId::new(dst))
            .expect("fixture edge")
    }

    pub fn build(self) -> Graph {
        let n = self.nodes.len();
        let out = Adjacency::build(n, &self.edges, |e| e.src);
        let inc = Adjacency::build(n, &self.edges, |e| e.dst);
        let node_types = self.nodes.iter().map(|n| n.node_type.clone()).collect();
        Graph {
            nodes: self.nodes,
            index: self.index,
            relations: self.relations,
            edges: self.edges,
            out,
            inc,
            node_types,
        }
    }
}

fn stored_relation(label: &str) -> Result<RelationType, GraphError> {
    let rel = RelationType::new(label)?;
    if rel.is_text() {
        return Err(GraphError::InvalidRelation {
            label: label.into(),
            reason: "reserved for text plans",
        });
    }
    if rel.is_inverse() {
        return Err(GraphError::InvalidRelation {
            label: label.into(),
            reason: "reserved inverse prefix",
        });
    }
    Ok(rel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub node_type_count: usize,
    pub edge_type_count: usize,
    /// 2|E|/|V|, rounded to one decimal.
    pub avg_degree: f64,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} nodes, {} edges, {} node types, {} edge types, avg degree {:.1}",
            self.node_count, self.edge_count, self.node_type_count, self.edge_type_count, self.avg_degree
        )
    }
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    index: HashMap<NodeId, u32>,
    relations: IndexSet<RelationType>,
    edges: Vec<EdgeRec>,
    out: Adjacency,
    inc: Adjacency,
    node_types: IndexSet<String>,
}

#[derive(Deserialize)]
struct EdgeRecord {
    src: String,
    rel: String,
    dst: String,
}

/// Loads the line-delimited JSON node and edge sources.
pub fn load_graph(nodes: impl BufRead, edges: impl BufRead) -> Result<Graph, GraphError> {
    let mut builder = GraphBuilder::new();
    for (i, line) in nodes.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let node: Node = serde_json::from_str(&line).map_err(|e| GraphError::Malformed {
            source_name: "nodes",
            line: line_no,
            message: e.to_string(),
        })?;
        if node.id.as_str().is_empty() {
            return Err(GraphError::Malformed {
                source_name: "nodes",
                line: line_no,
                message: "empty node id".into(),
            });
        }
        if builder.index.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode {
                id: node.id.to_string(),
                line: line_no,
            });
        }
        builder.add_node(node)?;
    }
    for (i, line) in edges.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EdgeRecord = serde_json::from_str(&line).map_err(|e| GraphError::Malformed {
            source_name: "edges",
            line: line_no,
            message: e.to_string(),
        })?;
        for id in [&rec.src, &rec.dst] {
            if !builder.index.contains_key(id.as_str()) {
                return Err(GraphError::UnknownNodeAt {
                    id: id.clone(),
                    line: line_no,
                });
            }
        }
        builder
            .add_edge(&NodeId(rec.src), &rec.rel, &NodeId(rec.dst))
            .map_err(|e| GraphError::Malformed {
                source_name: "edges",
                line: line_no,
                message: e.to_string(),
            })?;
    }
    Ok(builder.build())
}

pub fn load_graph_files(nodes: &Path, edges: &Path) -> Result<Graph, GraphError> {
    let open = |p: &Path| std::fs::File::open(p).map(std::io::BufReader::new);
    load_graph(open(nodes)?, open(edges)?)
}

impl std::borrow::Borrow<str> for RelationType {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn ix(&self, id: &NodeId) -> Option<NodeIx> {
        self.index.get(id).map(|&i| NodeIx(i))
    }

    pub fn ix_of(&self, id: &str) -> Option<NodeIx> {
        self.index.get(id).map(|&i| NodeIx(i))
    }

    fn require(&self, id: &NodeId) -> Result<NodeIx, GraphError> {
        self.ix(id).ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    pub fn node(&self, ix: NodeIx) -> &Node {
        &self.nodes[ix.index()]
    }

    pub fn node_by_id(&self, id: &NodeId) -> Option<&Node> {
        self.ix(id).map(|ix| self.node(ix))
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = (NodeIx, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeIx(i as u32), n))
    }

    pub fn edge(&self, e: EdgeIx) -> EdgeView<'_> {
        let rec = self.edges[e.index()];
        EdgeView {
            id: e,
            src: NodeIx(rec.src),
            relation: &self.relations[rec.rel as usize],
            dst: NodeIx(rec.dst),
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeView<'_>> {
        (0..self.edges.len()).map(|i| self.edge(EdgeIx(i as u32)))
    }

    pub fn triplet(&self, e: EdgeIx) -> Triplet {
        let v = self.edge(e);
        Triplet {
            src: self.node(v.src).id.clone(),
            relation: v.relation.clone(),
            dst: self.node(v.dst).id.clone(),
        }
    }

    /// Stored edge labels in first-seen order.
    pub fn relation_types(&self) -> impl Iterator<Item = &RelationType> {
        self.relations.iter()
    }

    pub fn node_types(&self) -> impl Iterator<Item = &str> {
        self.node_types.iter().map(String::as_str)
    }

    fn relation_ix(&self, label: &str) -> Option<u32> {
        self.relations.get_index_of(label).map(|i| i as u32)
    }

    /// Edge ids incident to `node`, outgoing block first when `Both`.
    pub fn incident_edges(
        &self,
        node: NodeIx,
        relation: Option<&RelationType>,
        direction: Direction,
    ) -> Vec<EdgeIx> {
        let rel = match relation {
            Some(r) => match self.relation_ix(r.as_str()) {
                Some(ix) => Some(ix),
                None => return Vec::new(),
            },
            None => None,
        };
        let pick = |adj: &Adjacency| -> Vec<EdgeIx> {
            let slice = match rel {
                Some(r) => adj.of_relation(node.0, r, &self.edges),
                None => adj.of(node.0),
            };
            slice.iter().map(|&e| EdgeIx(e)).collect()
        };
        match direction {
            Direction::Out => pick(&self.out),
            Direction::In => pick(&self.inc),
            Direction::Both => {
                let mut v = pick(&self.out);
                v.extend(pick(&self.inc));
                v
            }
        }
    }

    pub fn neighbors(
        &self,
        node: &NodeId,
        relation: Option<&RelationType>,
        direction: Direction,
    ) -> Result<Vec<Triplet>, GraphError> {
        let ix = self.require(node)?;
        Ok(self
            .incident_edges(ix, relation, direction)
            .into_iter()
            .map(|e| self.triplet(e))
            .collect())
    }

    /// Nodes one hop away along `hop` (inverse hops follow incoming edges).
    fn step(&self, node: u32, hop: &RelationType, out: &mut impl Extend<u32>) {
        let Some(rel) = self.relation_ix(hop.base()) else {
            return;
        };
        if hop.is_inverse() {
            out.extend(
                self.inc
                    .of_relation(node, rel, &self.edges)
                    .iter()
                    .map(|&e| self.edges[e as usize].src),
            );
        } else {
            out.extend(
                self.out
                    .of_relation(node, rel, &self.edges)
                    .iter()
                    .map(|&e| self.edges[e as usize].dst),
            );
        }
    }

    /// Nodes reached from any seed by following `path` hop by hop, in
    /// ascending index order.
    pub fn reachable_ix(&self, seeds: &[NodeIx], path: &RelationPath) -> Result<Vec<NodeIx>, GraphError> {
        if path.has_text() {
            return Err(GraphError::TextHop);
        }
        let mut frontier: HashSet<u32> = seeds.iter().map(|s| s.0).collect();
        for hop in path.hops() {
            if frontier.is_empty() {
                break;
            }
            let mut next = HashSet::new();
            for &n in &frontier {
                self.step(n, hop, &mut next);
            }
            frontier = next;
        }
        let mut v: Vec<NodeIx> = frontier.into_iter().map(NodeIx).collect();
        v.sort_unstable();
        Ok(v)
    }

    pub fn reachable_set<'a>(
        &self,
        seeds: impl IntoIterator<Item = &'a NodeId>,
        path: &RelationPath,
    ) -> Result<BTreeSet<NodeId>, GraphError> {
        let seeds = seeds
            .into_iter()
            .map(|s| self.require(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .reachable_ix(&seeds, path)?
            .into_iter()
            .map(|ix| self.node(ix).id.clone())
            .collect())
    }

    /// Arcs leaving `node` in the doubled graph: `(label, neighbor)` where
    /// label is `2*rel` for a forward hop and `2*rel+1` for an inverse hop.
    fn arcs_out(&self, node: u32, out: &mut Vec<(u32, u32)>) {
        out.extend(self.out.of(node).iter().map(|&e| {
            let r = self.edges[e as usize];
            (2 * r.rel, r.dst)
        }));
        out.extend(self.inc.of(node).iter().map(|&e| {
            let r = self.edges[e as usize];
            (2 * r.rel + 1, r.src)
        }));
    }

    /// Arcs entering `node` in the doubled graph: `(label, predecessor)`.
    fn arcs_in(&self, node: u32, out: &mut Vec<(u32, u32)>) {
        out.extend(self.inc.of(node).iter().map(|&e| {
            let r = self.edges[e as usize];
            (2 * r.rel, r.src)
        }));
        out.extend(self.out.of(node).iter().map(|&e| {
            let r = self.edges[e as usize];
            (2 * r.rel + 1, r.dst)
        }));
    }

    fn label(&self, label: u32) -> RelationType {
        let rel = &self.relations[(label / 2) as usize];
        if label % 2 == 0 {
            rel.clone()
        } else {
            rel.inverse()
        }
    }

    /// All distinct relation sequences of minimal length `1 <= L <= max_len`
    /// realised by some walk from a seed to `target`, where hops may follow
    /// edges forwards or backwards (`inv___` labels). Empty if the target is a
    /// seed or lies beyond `max_len`.
    pub fn shortest_paths_ix(&self, seeds: &[NodeIx], target: NodeIx, max_len: usize) -> BTreeSet<RelationPath> {
        let mut result = BTreeSet::new();
        if seeds.is_empty() || max_len == 0 || seeds.contains(&target) {
            return result;
        }
        // Layered BFS in the doubled graph.
        let mut dist: HashMap<u32, usize> = seeds.iter().map(|s| (s.0, 0)).collect();
        let mut layer: Vec<u32> = {
            let mut v: Vec<u32> = dist.keys().copied().collect();
            v.sort_unstable();
            v
        };
        let mut arcs = Vec::new();
        let mut found = None;
        for depth in 1..=max_len {
            let mut next = Vec::new();
            for &u in &layer {
                arcs.clear();
                self.arcs_out(u, &mut arcs);
                for &(_, v) in &arcs {
                    if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                        slot.insert(depth);
                        next.push(v);
                    }
                }
            }
            if dist.get(&target.0) == Some(&depth) {
                found = Some(depth);
                break;
            }
            if next.is_empty() {
                break;
            }
            layer = next;
        }
        let Some(len) = found else {
            return result;
        };
        // Walk back through the layers collecting label suffixes.
        let mut suffixes: HashMap<u32, BTreeSet<Vec<u32>>> = HashMap::new();
        suffixes.insert(target.0, BTreeSet::from([Vec::new()]));
        for depth in (0..len).rev() {
            let mut prev: HashMap<u32, BTreeSet<Vec<u32>>> = HashMap::new();
            for (&v, tails) in &suffixes {
                arcs.clear();
                self.arcs_in(v, &mut arcs);
                for &(label, u) in &arcs {
                    if dist.get(&u) != Some(&depth) {
                        continue;
                    }
                    let entry = prev.entry(u).or_default();
                    for tail in tails {
                        let mut seq = Vec::with_capacity(tail.len() + 1);
                        seq.push(label);
                        seq.extend_from_slice(tail);
                        entry.insert(seq);
                    }
                }
            }
            suffixes = prev;
        }
        for tails in suffixes.into_values() {
            for seq in tails {
                result.insert(RelationPath::new(seq.into_iter().map(|l| self.label(l)).collect()));
            }
        }
        result
    }

    pub fn shortest_relation_paths<'a>(
        &self,
        seeds: impl IntoIterator<Item = &'a NodeId>,
        target: &NodeId,
        max_len: usize,
    ) -> Result<BTreeSet<RelationPath>, GraphError> {
        let seeds = seeds
            .into_iter()
            .map(|s| self.require(s))
            .collect::<Result<Vec<_>, _>>()?;
        let target = self.require(target)?;
        Ok(self.shortest_paths_ix(&seeds, target, max_len))
    }

    pub fn stats(&self) -> GraphStats {
        let (v, e) = (self.nodes.len(), self.edges.len());
        let avg_degree = if v == 0 {
            0.0
        } else {
            (20.0 * e as f64 / v as f64).round() / 10.0
        };
        GraphStats {
            node_count: v,
            edge_count: e,
            node_type_count: self.node_types.len(),
            edge_type_count: self.relations.len(),
            avg_degree,
        }
    }
}

/// The small author/paper/institution graph used across the test suites:
/// `A -awp-> P1`, `A -awp-> P2`, `A -affiliated-> I1`.
pub fn sample_graph() -> Graph {
    let mut b = GraphBuilder::new();
    b.node("A", "author", "Ada", "Ada is an author working on graph learning.");
    b.node("P1", "paper", "Graph Retrieval Basics", "A paper about retrieving nodes in graphs.");
    b.node("P2", "paper", "Agents over Knowledge Graphs", "A paper about language agents on graphs.");
    b.node("I1", "institution", "Analytical Engine Institute", "A research institute.");
    b.edge("A", "author_writes_paper", "P1");
    b.edge("A", "author_writes_paper", "P2");
    b.edge("A", "affiliated", "I1");
    b.build()
}
