//! Sentence graphs built from constituency trees, plus the traversal
//! primitives the explainer and the label extraction rely on.

use std::collections::{BTreeSet, VecDeque};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{ConstituencyTree, Constituent, LabelMap, TreeError, TreeNodeId, UnknownLabelPolicy};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("node {0} is not in the graph")]
    UnknownNodeId(NodeId),
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("invalid graph `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Word,
    Special(Constituent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub surface: String,
    /// Token index, present exactly for word nodes.
    pub position: Option<usize>,
}

impl GraphNode {
    pub fn is_word(&self) -> bool {
        matches!(self.kind, NodeKind::Word)
    }

    pub fn special(&self) -> Option<Constituent> {
        match self.kind {
            NodeKind::Special(c) => Some(c),
            NodeKind::Word => None,
        }
    }
}

/// Directed out-tree over word and constituent nodes. Edges run parent to child.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<(NodeId, NodeId)>,
    root: NodeId,
    pub sentence_id: String,
    pub gold_label: Option<usize>,
    pub teacher_label: Option<usize>,
    children: Vec<Vec<NodeId>>,
    parent: Vec<Option<NodeId>>,
    neighbors: Vec<Vec<NodeId>>,
}

impl SentenceGraph {
    /// Builds a graph and checks the hierarchy invariants.
    pub fn new(
        sentence_id: impl Into<String>,
        nodes: Vec<GraphNode>,
        edges: Vec<(NodeId, NodeId)>,
        root: NodeId,
    ) -> Result<Self, GraphError> {
        let sentence_id = sentence_id.into();
        let invalid = |reason: String| GraphError::Invalid {
            id: sentence_id.clone(),
            reason,
        };
        let n = nodes.len();
        if n == 0 {
            return Err(invalid("graph has no nodes".into()));
        }
        if root >= n {
            return Err(invalid(format!("root {root} out of range")));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(invalid(format!("node ids must be dense, found {} at {i}", node.id)));
            }
            if node.is_word() != node.position.is_some() {
                return Err(invalid(format!("node {i}: position must be set exactly for word nodes")));
            }
        }
        let mut children = vec![Vec::new(); n];
        let mut parent = vec![None; n];
        let mut neighbors = vec![Vec::new(); n];
        for &(src, dst) in &edges {
            if src >= n || dst >= n {
                return Err(invalid(format!("edge ({src}, {dst}) out of range")));
            }
            if nodes[src].is_word() {
                return Err(invalid(format!("word node {src} has an outgoing edge")));
            }
            if parent[dst].is_some() {
                return Err(invalid(format!("node {dst} has more than one parent")));
            }
            parent[dst] = Some(src);
            children[src].push(dst);
            neighbors[src].push(dst);
            neighbors[dst].push(src);
        }
        if parent[root].is_some() {
            return Err(invalid("root has an incoming edge".into()));
        }
        if let Some(orphan) = (0..n).find(|&v| v != root && parent[v].is_none()) {
            return Err(invalid(format!("node {orphan} has no parent")));
        }
        // n - 1 unique in-edges plus reachability from the root rules out cycles.
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &c in &children[v] {
                if !seen[c] {
                    seen[c] = true;
                    reached += 1;
                    queue.push_back(c);
                }
            }
        }
        if reached != n {
            return Err(invalid("graph contains a cycle or is disconnected".into()));
        }
        Ok(Self {
            nodes,
            edges,
            root,
            sentence_id,
            gold_label: None,
            teacher_label: None,
            children,
            parent,
            neighbors,
        })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id]
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id]
    }

    /// Direction-blind adjacency.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.neighbors[id]
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.neighbors[id].len()
    }

    pub fn word_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_word()).count()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id < self.nodes.len()
    }

    /// Constituent ancestors of `id`, ordered root first, excluding `id` itself.
    pub fn ancestor_chain(&self, id: NodeId) -> Vec<Constituent> {
        let mut chain = Vec::new();
        let mut cur = self.parent[id];
        while let Some(p) = cur {
            if let Some(c) = self.nodes[p].special() {
                chain.push(c);
            }
            cur = self.parent[p];
        }
        chain.reverse();
        chain
    }

    /// Hop depth of every node below the root.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.len()];
        let mut queue = VecDeque::from([self.root]);
        while let Some(v) = queue.pop_front() {
            for &c in &self.children[v] {
                depth[c] = depth[v] + 1;
                queue.push_back(c);
            }
        }
        depth
    }

    /// Nodes within `radius` direction-blind hops of any node in `seeds`.
    pub fn neighborhood(&self, seeds: &[NodeId], radius: usize) -> BTreeSet<NodeId> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            if dist[v] == radius {
                continue;
            }
            for &u in &self.neighbors[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        (0..self.len()).filter(|&v| dist[v] != usize::MAX).collect()
    }

    /// Whether `set` induces a weakly connected subgraph.
    pub fn is_weakly_connected(&self, set: &BTreeSet<NodeId>) -> bool {
        let Some(&start) = set.iter().next() else {
            return false;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in &self.neighbors[v] {
                if set.contains(&u) && seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == set.len()
    }

    /// The same graph with node ids relabeled by `perm` (old id -> new id).
    pub fn relabeled(&self, perm: &[NodeId]) -> Result<Self, GraphError> {
        let mut nodes = vec![None; self.len()];
        for node in &self.nodes {
            let mut moved = node.clone();
            moved.id = perm[node.id];
            nodes[perm[node.id]] = Some(moved);
        }
        let nodes = nodes
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| GraphError::Invalid {
                id: self.sentence_id.clone(),
                reason: "relabeling is not a permutation".into(),
            })?;
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let mut g = Self::new(self.sentence_id.clone(), nodes, edges, perm[self.root])?;
        g.gold_label = self.gold_label;
        g.teacher_label = self.teacher_label;
        Ok(g)
    }
}

fn is_wrapper(tree: &ConstituencyTree, id: TreeNodeId) -> bool {
    let node = tree.node(id);
    matches!(node.label.as_str(), "" | "ROOT" | "TOP")
        && node.children.len() == 1
        && !tree.node(node.children[0]).is_leaf()
}

fn is_preterminal(tree: &ConstituencyTree, id: TreeNodeId) -> bool {
    let node = tree.node(id);
    node.children.len() == 1 && tree.node(node.children[0]).is_leaf()
}

/// Converts a tree into a sentence graph with the bundled alias table.
pub fn tree_to_graph(tree: &ConstituencyTree, policy: UnknownLabelPolicy) -> Result<SentenceGraph, GraphError> {
    tree_to_graph_with(tree, &LabelMap::builtin(), policy)
}

/// Converts a tree into a sentence graph.
///
/// Node ids follow a pre-order walk. POS preterminals are elided so that
/// words hang from the nearest phrase node; a bare `ROOT`/`TOP`/empty wrapper
/// above the sentence is skipped. The root is always kept.
pub fn tree_to_graph_with(
    tree: &ConstituencyTree,
    labels: &LabelMap,
    policy: UnknownLabelPolicy,
) -> Result<SentenceGraph, GraphError> {
    let mut top = tree.root;
    while is_wrapper(tree, top) {
        top = tree.node(top).children[0];
    }
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut edges = Vec::new();
    let mut position = 0;
    // (tree node, graph parent)
    let mut stack: Vec<(TreeNodeId, Option<NodeId>)> = vec![(top, None)];
    while let Some((tid, parent)) = stack.pop() {
        let tnode = tree.node(tid);
        if tnode.is_leaf() {
            let id = nodes.len();
            nodes.push(GraphNode {
                id,
                kind: NodeKind::Word,
                surface: tnode.label.clone(),
                position: Some(position),
            });
            position += 1;
            if let Some(p) = parent {
                edges.push((p, id));
            }
            continue;
        }
        if parent.is_some() && is_preterminal(tree, tid) {
            stack.push((tnode.children[0], parent));
            continue;
        }
        let kind = labels.map_label(&tnode.label, policy)?;
        let id = nodes.len();
        nodes.push(GraphNode {
            id,
            kind: NodeKind::Special(kind),
            surface: kind.name().to_string(),
            position: None,
        });
        if let Some(p) = parent {
            edges.push((p, id));
        }
        for &c in tnode.children.iter().rev() {
            stack.push((c, Some(id)));
        }
    }
    let mut g = SentenceGraph::new(tree.sentence_id.clone(), nodes, edges, 0)?;
    g.gold_label = tree.gold_label;
    g.teacher_label = tree.teacher_label;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    Hops(usize),
    Unreachable,
}

/// Directed hop count from `from` to `to`.
pub fn shortest_distance(g: &SentenceGraph, from: NodeId, to: NodeId) -> Result<Distance, GraphError> {
    for id in [from, to] {
        if !g.contains(id) {
            return Err(GraphError::UnknownNodeId(id));
        }
    }
    let mut dist = vec![usize::MAX; g.len()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            return Ok(Distance::Hops(dist[v]));
        }
        for &c in g.children(v) {
            if dist[c] == usize::MAX {
                dist[c] = dist[v] + 1;
                queue.push_back(c);
            }
        }
    }
    Ok(Distance::Unreachable)
}

/// A node-induced view of a sentence graph. Node ids keep their original values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphView {
    pub nodes: BTreeSet<NodeId>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub root: Option<NodeId>,
}

fn induced(g: &SentenceGraph, keep: &BTreeSet<NodeId>) -> GraphView {
    let edges = g
        .edges()
        .iter()
        .copied()
        .filter(|(s, d)| keep.contains(s) && keep.contains(d))
        .collect();
    GraphView {
        nodes: keep.clone(),
        edges,
        root: keep.contains(&g.root()).then_some(g.root()),
    }
}

/// Induced subgraph on every node not in `drop`; ids outside the graph are ignored.
pub fn remove_nodes(g: &SentenceGraph, drop: &BTreeSet<NodeId>) -> GraphView {
    let keep = (0..g.len()).filter(|v| !drop.contains(v)).collect();
    induced(g, &keep)
}

pub fn induced_subgraph(g: &SentenceGraph, keep: &BTreeSet<NodeId>) -> Result<GraphView, GraphError> {
    if keep.is_empty() {
        return Err(GraphError::EmptyNodeSet);
    }
    if let Some(&bad) = keep.iter().find(|&&v| !g.contains(v)) {
        return Err(GraphError::UnknownNodeId(bad));
    }
    Ok(induced(g, keep))
}

/// Weakly connected components, each sorted, ordered by smallest member.
pub fn connected_components(view: &GraphView) -> Vec<Vec<NodeId>> {
    let Some(&max_id) = view.nodes.iter().next_back() else {
        return Vec::new();
    };
    let mut adj = vec![Vec::new(); max_id + 1];
    for &(s, d) in &view.edges {
        adj[s].push(d);
        adj[d].push(s);
    }
    let mut seen = vec![false; max_id + 1];
    let mut components = Vec::new();
    for &start in &view.nodes {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                    queue.push_back(u);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub kind: String,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub special_id: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

/// Wire form of one graph NDJSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[NodeId; 2]>,
    pub root: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_label: Option<usize>,
}

impl From<&SentenceGraph> for GraphRecord {
    fn from(g: &SentenceGraph) -> Self {
        let nodes = g
            .nodes()
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                kind: if n.is_word() { "word" } else { "special" }.to_string(),
                surface: n.surface.clone(),
                special_id: n.special().map(Constituent::id),
                position: n.position,
            })
            .collect();
        GraphRecord {
            id: g.sentence_id.clone(),
            nodes,
            edges: g.edges().iter().map(|&(s, d)| [s, d]).collect(),
            root: g.root(),
            gold_label: g.gold_label,
            teacher_label: g.teacher_label,
        }
    }
}

impl TryFrom<GraphRecord> for SentenceGraph {
    type Error = GraphError;

    fn try_from(rec: GraphRecord) -> Result<Self, GraphError> {
        let invalid = |reason: String| GraphError::Invalid {
            id: rec.id.clone(),
            reason,
        };
        let mut nodes = Vec::with_capacity(rec.nodes.len());
        for n in &rec.nodes {
            let kind = match (n.kind.as_str(), n.special_id) {
                ("word", None) => NodeKind::Word,
                ("special", Some(sid)) => NodeKind::Special(
                    Constituent::from_id(sid).ok_or_else(|| invalid(format!("unknown special_id {sid}")))?,
                ),
                (kind, sid) => return Err(invalid(format!("node {}: kind `{kind}` with special_id {sid:?}", n.id))),
            };
            nodes.push(GraphNode {
                id: n.id,
                kind,
                surface: n.surface.clone(),
                position: n.position,
            });
        }
        let edges = rec.edges.iter().map(|&[s, d]| (s, d)).collect();
        let mut g = SentenceGraph::new(rec.id.clone(), nodes, edges, rec.root)?;
        g.gold_label = rec.gold_label;
        g.teacher_label = rec.teacher_label;
        Ok(g)
    }
}

pub fn graph_to_json(g: &SentenceGraph) -> String {
    serde_json::to_string(&GraphRecord::from(g)).expect("graph records serialize")
}

pub fn read_graphs<R: BufRead>(reader: R) -> Result<Vec<SentenceGraph>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| GraphError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(SentenceGraph::try_from(rec)?);
    }
    Ok(out)
}
