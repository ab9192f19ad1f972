//! Undirected multi-graphs with directed-edge siblings.
//!
//! Binary variables live on edges and factors on nodes. Every undirected edge
//! `α` owns two directed slots, `α+` (held by the tail) and `α-` (held by the
//! head). A self-edge has `tail == head`, so its node holds both slots. Node and
//! edge ids are stable: contraction keeps the ids of everything that survives.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn flip(self) -> Self {
        match self {
            Polarity::Plus => Polarity::Minus,
            Polarity::Minus => Polarity::Plus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Polarity::Plus => '+',
            Polarity::Minus => '-',
        }
    }
}

/// One orientation of an undirected edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub edge: EdgeId,
    pub polarity: Polarity,
}

impl DirectedEdge {
    pub fn plus(edge: EdgeId) -> Self {
        Self { edge, polarity: Polarity::Plus }
    }

    pub fn minus(edge: EdgeId) -> Self {
        Self { edge, polarity: Polarity::Minus }
    }

    /// The reversed orientation. Involutive.
    pub fn reversed(self) -> Self {
        Self { edge: self.edge, polarity: self.polarity.flip() }
    }
}

impl fmt::Display for DirectedEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.edge, self.polarity.symbol())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct NodeData {
    name: String,
    incidence: Vec<DirectedEdge>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct EdgeData {
    name: String,
    tail: NodeId,
    head: NodeId,
}

/// Immutable multi-graph. Contraction returns a new value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiGraph {
    nodes: BTreeMap<NodeId, NodeData>,
    edges: BTreeMap<EdgeId, EdgeData>,
}

/// Incremental constructor; incidence lists follow edge insertion order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: BTreeMap<NodeId, NodeData>,
    edges: BTreeMap<EdgeId, EdgeData>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.insert(id, NodeData { name: name.into(), incidence: Vec::new() });
        id
    }

    pub fn add_edge(&mut self, name: impl Into<String>, tail: NodeId, head: NodeId) -> Result<EdgeId> {
        if !self.nodes.contains_key(&tail) {
            return Err(Error::UnknownNode(tail));
        }
        if !self.nodes.contains_key(&head) {
            return Err(Error::UnknownNode(head));
        }
        let id = EdgeId(self.edges.len() as u32);
        self.edges.insert(id, EdgeData { name: name.into(), tail, head });
        self.nodes.get_mut(&tail).unwrap().incidence.push(DirectedEdge::plus(id));
        self.nodes.get_mut(&head).unwrap().incidence.push(DirectedEdge::minus(id));
        Ok(id)
    }

    pub fn build(self) -> MultiGraph {
        MultiGraph { nodes: self.nodes, edges: self.edges }
    }
}

impl MultiGraph {
    /// Convenience constructor from anonymous nodes `0..n` and edge endpoint pairs.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut b = GraphBuilder::new();
        let ids: Vec<NodeId> = (0..num_nodes).map(|i| b.add_node(format!("v{i}"))).collect();
        for (k, &(t, h)) in edges.iter().enumerate() {
            let tail = *ids.get(t).ok_or(Error::UnknownNode(NodeId(t as u32)))?;
            let head = *ids.get(h).ok_or(Error::UnknownNode(NodeId(h as u32)))?;
            b.add_edge(format!("e{k}"), tail, head)?;
        }
        Ok(b.build())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.edges.keys().copied()
    }

    /// Directed edges in canonical order: `α+, α-` for each edge by id.
    pub fn directed_edges(&self) -> impl Iterator<Item = DirectedEdge> + '_ {
        self.edge_ids().flat_map(|e| [DirectedEdge::plus(e), DirectedEdge::minus(e)])
    }

    pub fn contains_node(&self, n: NodeId) -> bool {
        self.nodes.contains_key(&n)
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        self.edges.contains_key(&e)
    }

    pub fn node_name(&self, n: NodeId) -> Result<&str> {
        self.nodes.get(&n).map(|d| d.name.as_str()).ok_or(Error::UnknownNode(n))
    }

    pub fn edge_name(&self, e: EdgeId) -> Result<&str> {
        self.edges.get(&e).map(|d| d.name.as_str()).ok_or(Error::UnknownEdge(e))
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|(_, d)| d.name == name).map(|(&id, _)| id)
    }

    pub fn edge_by_name(&self, name: &str) -> Option<EdgeId> {
        self.edges.iter().find(|(_, d)| d.name == name).map(|(&id, _)| id)
    }

    /// `(tail, head)`; equal for a self-edge.
    pub fn endpoints(&self, e: EdgeId) -> Result<(NodeId, NodeId)> {
        self.edges.get(&e).map(|d| (d.tail, d.head)).ok_or(Error::UnknownEdge(e))
    }

    pub fn is_self_edge(&self, e: EdgeId) -> Result<bool> {
        self.endpoints(e).map(|(t, h)| t == h)
    }

    /// Ordered incident directed edges `e_d(a)`.
    pub fn incidence(&self, n: NodeId) -> Result<&[DirectedEdge]> {
        self.nodes.get(&n).map(|d| d.incidence.as_slice()).ok_or(Error::UnknownNode(n))
    }

    /// Node holding the directed slot `d`.
    pub fn owner(&self, d: DirectedEdge) -> Result<NodeId> {
        let (t, h) = self.endpoints(d.edge)?;
        Ok(match d.polarity {
            Polarity::Plus => t,
            Polarity::Minus => h,
        })
    }

    pub fn sibling(&self, d: DirectedEdge) -> Result<DirectedEdge> {
        if !self.contains_edge(d.edge) {
            return Err(Error::UnknownDirectedEdge(d));
        }
        Ok(d.reversed())
    }

    /// Position of `e` in ascending edge-id order.
    pub fn edge_index(&self, e: EdgeId) -> Option<usize> {
        self.edges.keys().position(|&k| k == e)
    }

    pub fn has_normal_edge(&self) -> bool {
        self.edges.values().any(|d| d.tail != d.head)
    }

    pub fn num_self_edges(&self) -> usize {
        self.edges.values().filter(|d| d.tail == d.head).count()
    }

    /// Number of connected components (isolated nodes count).
    pub fn connected_components(&self) -> usize {
        let ids: Vec<NodeId> = self.node_ids().collect();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut comps = ids.len();
        for d in self.edges.values() {
            let (a, b) = (find(&mut parent, index[&d.tail]), find(&mut parent, index[&d.head]));
            if a != b {
                parent[a] = b;
                comps -= 1;
            }
        }
        comps
    }

    /// `|E| - |V| + components`: the number of self-edges left once all normal edges are contracted.
    pub fn cycle_rank(&self) -> usize {
        self.num_edges() + self.connected_components() - self.num_nodes()
    }

    pub fn is_forest(&self) -> bool {
        self.cycle_rank() == 0
    }

    /// Sum out `e`. A normal edge merges its endpoints into the smaller id; the
    /// survivor's remaining slots come first, followed by the absorbed node's.
    pub fn contract_edge(&self, e: EdgeId) -> Result<MultiGraph> {
        let (tail, head) = self.endpoints(e)?;
        let mut out = self.clone();
        out.edges.remove(&e);
        if tail == head {
            out.nodes.get_mut(&tail).unwrap().incidence.retain(|d| d.edge != e);
            return Ok(out);
        }
        let (survivor, absorbed) = if tail < head { (tail, head) } else { (head, tail) };
        let gone = out.nodes.remove(&absorbed).unwrap();
        let keep = out.nodes.get_mut(&survivor).unwrap();
        keep.incidence.retain(|d| d.edge != e);
        keep.incidence.extend(gone.incidence.into_iter().filter(|d| d.edge != e));
        for d in out.edges.values_mut() {
            if d.tail == absorbed {
                d.tail = survivor;
            }
            if d.head == absorbed {
                d.head = survivor;
            }
        }
        Ok(out)
    }

    /// Greedy elimination order: smallest-id normal edge of the evolving graph
    /// while one exists, otherwise smallest-id self-edge.
    pub fn normal_first_order(&self) -> Vec<EdgeId> {
        let mut g = self.clone();
        let mut order = Vec::with_capacity(self.num_edges());
        while let Some(next) = g
            .edges
            .iter()
            .find(|(_, d)| d.tail != d.head)
            .or_else(|| g.edges.iter().next())
            .map(|(&id, _)| id)
        {
            order.push(next);
            g = g.contract_edge(next).expect("edge taken from the graph");
        }
        order
    }

    /// Greedy order that keeps node arities small: at each step contract the
    /// edge whose resulting node has the fewest slots (self-edges shrink their
    /// node, so they go first); ties go to the smallest id.
    pub fn min_arity_order(&self) -> Vec<EdgeId> {
        let mut g = self.clone();
        let mut order = Vec::with_capacity(self.num_edges());
        while let Some(next) = g
            .edges
            .iter()
            .min_by_key(|(&id, d)| {
                let arity = if d.tail == d.head {
                    g.nodes[&d.tail].incidence.len() - 2
                } else {
                    g.nodes[&d.tail].incidence.len() + g.nodes[&d.head].incidence.len() - 2
                };
                (arity, id)
            })
            .map(|(&id, _)| id)
        {
            order.push(next);
            g = g.contract_edge(next).expect("edge taken from the graph");
        }
        order
    }

    /// Checks that `order` is a permutation of the edge set.
    pub fn validate_order(&self, order: &[EdgeId]) -> Result<()> {
        if order.len() != self.num_edges() {
            return Err(Error::InvalidOrder(format!(
                "order has {} entries for {} edges",
                order.len(),
                self.num_edges()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &e in order {
            if !self.contains_edge(e) {
                return Err(Error::InvalidOrder(format!("unknown edge {e}")));
            }
            if !seen.insert(e) {
                return Err(Error::InvalidOrder(format!("edge {e} repeated")));
            }
        }
        Ok(())
    }
}
