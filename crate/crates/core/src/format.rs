//! JSON model files.
//!
//! ```json
//! {
//!   "nodes": ["a", "b"],
//!   "edges": [{"id": "e0", "tail": "a", "head": "b"}],
//!   "factors": {
//!     "a": {"order": ["e0+"], "table": {"0": 1, "1": 2}},
//!     "b": {"order": ["e0-"], "table": {"0": 3, "1": 4}}
//!   }
//! }
//! ```
//!
//! Character `i` of a table key is the bit of `order[i]`. The tail of an
//! edge owns `<id>+` and the head owns `<id>-` (`−` is accepted too). A table
//! may leave keys out only when its factor is marked `"soft": false`; missing
//! entries are then zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorTable, MultiGM};
use crate::multigraph::{DirectedEdge, GraphBuilder, NodeId, Polarity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub id: String,
    pub tail: String,
    pub head: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorEntry {
    pub order: Vec<String>,
    pub table: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeEntry>,
    pub factors: BTreeMap<String, FactorEntry>,
}

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn directed_name(graph: &crate::multigraph::MultiGraph, d: DirectedEdge) -> String {
    format!("{}{}", graph.edge_name(d.edge).unwrap(), if d.polarity == Polarity::Plus { '+' } else { '-' })
}

impl ModelFile {
    pub fn from_model(m: &MultiGM) -> Self {
        let g = m.graph();
        let nodes = g.node_ids().map(|n| g.node_name(n).unwrap().to_string()).collect();
        let edges = g
            .edge_ids()
            .map(|e| {
                let (t, h) = g.endpoints(e).unwrap();
                EdgeEntry {
                    id: g.edge_name(e).unwrap().to_string(),
                    tail: g.node_name(t).unwrap().to_string(),
                    head: g.node_name(h).unwrap().to_string(),
                }
            })
            .collect();
        let factors = m
            .factors()
            .map(|f| {
                let k = f.arity();
                let table = f
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(s, &v)| ((0..k).map(|i| if s >> i & 1 == 1 { '1' } else { '0' }).collect(), v))
                    .collect();
                let entry = FactorEntry {
                    order: f.vars().iter().map(|&d| directed_name(g, d)).collect(),
                    table,
                    soft: (!f.is_soft()).then_some(false),
                };
                (g.node_name(f.node()).unwrap().to_string(), entry)
            })
            .collect();
        Self { nodes, edges, factors }
    }

    pub fn to_model(&self) -> Result<MultiGM> {
        let mut b = GraphBuilder::new();
        let mut node_ids = BTreeMap::new();
        for name in &self.nodes {
            if name.is_empty() {
                return Err(perr("nodes: empty node id"));
            }
            if node_ids.insert(name.as_str(), b.add_node(name.clone())).is_some() {
                return Err(perr(format!("nodes: duplicate node id {name:?}")));
            }
        }
        let mut edge_ids = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.id.is_empty() || e.id.ends_with(['+', '-', '\u{2212}']) {
                return Err(perr(format!("edges[{i}]: invalid edge id {:?}", e.id)));
            }
            let lookup = |n: &str, field: &str| {
                node_ids.get(n).copied().ok_or_else(|| perr(format!("edges[{i}].{field}: unknown node {n:?}")))
            };
            let (t, h) = (lookup(&e.tail, "tail")?, lookup(&e.head, "head")?);
            let id = b.add_edge(e.id.clone(), t, h)?;
            if edge_ids.insert(e.id.as_str(), id).is_some() {
                return Err(perr(format!("edges[{i}]: duplicate edge id {:?}", e.id)));
            }
        }
        let graph = b.build();
        if let Some(extra) = self.factors.keys().find(|k| !node_ids.contains_key(k.as_str())) {
            return Err(perr(format!("factors: {extra:?} is not a node")));
        }
        let mut factors = Vec::with_capacity(self.nodes.len());
        for name in &self.nodes {
            let node = node_ids[name.as_str()];
            let entry = self.factors.get(name).ok_or_else(|| perr(format!("factors: missing factor for node {name:?}")))?;
            factors.push(parse_factor(&graph, node, name, entry, &edge_ids)?);
        }
        MultiGM::new(graph, factors)
    }
}

fn parse_directed(
    name: &str,
    raw: &str,
    edge_ids: &BTreeMap<&str, crate::multigraph::EdgeId>,
) -> Result<DirectedEdge> {
    let (base, pol) = if let Some(b) = raw.strip_suffix('+') {
        (b, Polarity::Plus)
    } else if let Some(b) = raw.strip_suffix('-').or_else(|| raw.strip_suffix('\u{2212}')) {
        (b, Polarity::Minus)
    } else {
        return Err(perr(format!("factors.{name}.order: {raw:?} must end in '+' or '-'")));
    };
    let edge = *edge_ids.get(base).ok_or_else(|| perr(format!("factors.{name}.order: unknown edge {base:?}")))?;
    Ok(DirectedEdge { edge, polarity: pol })
}

fn parse_factor(
    graph: &crate::multigraph::MultiGraph,
    node: NodeId,
    name: &str,
    entry: &FactorEntry,
    edge_ids: &BTreeMap<&str, crate::multigraph::EdgeId>,
) -> Result<FactorTable> {
    let incidence = graph.incidence(node)?;
    let order: Vec<DirectedEdge> =
        entry.order.iter().map(|r| parse_directed(name, r, edge_ids)).collect::<Result<_>>()?;
    let as_set: BTreeSet<_> = order.iter().collect();
    if order.len() != incidence.len() || as_set.len() != order.len() || incidence.iter().any(|d| !as_set.contains(d)) {
        let want: Vec<String> = incidence.iter().map(|&d| directed_name(graph, d)).collect();
        return Err(perr(format!("factors.{name}.order: expected the slots {want:?} (any order), got {:?}", entry.order)));
    }
    // file position i -> incidence position
    let target: Vec<usize> = order.iter().map(|d| incidence.iter().position(|x| x == d).unwrap()).collect();
    let k = order.len();
    let mut values = vec![0.0; 1 << k];
    let mut seen = vec![false; 1 << k];
    for (key, &v) in &entry.table {
        if key.len() != k || !key.bytes().all(|c| c == b'0' || c == b'1') {
            return Err(perr(format!("factors.{name}.table: key {key:?} is not a bitstring of length {k}")));
        }
        if !(v.is_finite() && v >= 0.0) {
            return Err(perr(format!("factors.{name}.table[{key:?}]: entry must be finite and >= 0, got {v}")));
        }
        let idx = key.bytes().enumerate().fold(0usize, |acc, (i, c)| acc | usize::from(c == b'1') << target[i]);
        values[idx] = v;
        seen[idx] = true;
    }
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 && entry.soft != Some(false) {
        return Err(perr(format!(
            "factors.{name}.table: {missing} of {} entries missing; mark the factor \"soft\": false to default them to 0",
            1 << k
        )));
    }
    if entry.soft == Some(true) && values.contains(&0.0) {
        return Err(perr(format!("factors.{name}: marked soft but has zero entries")));
    }
    FactorTable::new(node, incidence.to_vec(), values)
}

pub fn parse_model(text: &str) -> Result<MultiGM> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| perr(e.to_string()))?;
    file.to_model()
}

pub fn serialize_model(m: &MultiGM) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(m)).expect("model file serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: &str = r#"{
        "nodes": ["a", "b"],
        "edges": [{"id": "e0", "tail": "a", "head": "b"}],
        "factors": {
            "a": {"order": ["e0+"], "table": {"0": 1, "1": 2}},
            "b": {"order": ["e0−"], "table": {"0": 3, "1": 4}}
        }
    }"#;

    #[test]
    fn parse_pair() {
        let m = parse_model(PAIR).unwrap();
        assert_eq!(m.partition_exact().unwrap(), 11.0);
        let again = parse_model(&serialize_model(&m)).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn permuted_order_is_reindexed() {
        let text = r#"{
            "nodes": ["a"],
            "edges": [{"id": "s", "tail": "a", "head": "a"}],
            "factors": {"a": {"order": ["s-", "s+"], "table": {"00": 2, "10": 7, "01": 5, "11": 3}}}
        }"#;
        let m = parse_model(text).unwrap();
        // key "10" sets s- which is incidence position 1
        assert_eq!(m.factor(NodeId(0)).unwrap().values(), &[2.0, 5.0, 7.0, 3.0]);
    }

    #[test]
    fn errors_name_the_node() {
        let bad = PAIR.replace(r#""1": 2"#, r#""1x": 2"#);
        let e = parse_model(&bad).unwrap_err().to_string();
        assert!(e.contains("factors.a.table") && e.contains("1x"), "{e}");
        let sparse = PAIR.replace(r#""0": 1, "#, "");
        assert!(parse_model(&sparse).unwrap_err().to_string().contains("soft"));
        let marked = sparse.replace(r#""table": {"1": 2}"#, r#""table": {"1": 2}, "soft": false"#);
        assert_eq!(parse_model(&marked).unwrap().factor(NodeId(0)).unwrap().values(), &[0.0, 2.0]);
        let neg = PAIR.replace(r#""1": 4"#, r#""1": -4"#);
        assert!(parse_model(&neg).unwrap_err().to_string().contains("factors.b"));
        let syntax = PAIR.replace("\"nodes\"", "nodes");
        assert!(parse_model(&syntax).unwrap_err().to_string().contains("line"));
        let unknown = PAIR.replace(r#""head": "b""#, r#""head": "z""#);
        assert!(parse_model(&unknown).unwrap_err().to_string().contains("edges[0].head"));
    }
}
