//! Seeded generators for test and verification models.
//!
//! Factor entries are drawn log-uniformly from `[0.1, 10]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::MultiGM;
use crate::multigraph::{GraphBuilder, MultiGraph, NodeId};

pub const ENTRY_LO: f64 = 0.1;
pub const ENTRY_HI: f64 = 10.0;

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

/// Soft random tables on a fixed graph.
pub fn random_tables(graph: MultiGraph, rng: &mut impl Rng) -> Result<MultiGM> {
    MultiGM::from_fn(graph, |_, vars| (0..1usize << vars.len()).map(|_| log_uniform(rng, ENTRY_LO, ENTRY_HI)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    pub nodes: usize,
    pub edges: usize,
    /// Probability that a new edge is a self-edge.
    pub self_edge_prob: f64,
    /// Largest number of directed slots allowed at one node.
    pub max_arity: usize,
}

/// Random multigraph with parallel and self-edges; retries until no node exceeds `max_arity`.
pub fn random_multigraph(spec: &GraphSpec, rng: &mut impl Rng) -> Result<MultiGraph> {
    if spec.nodes == 0 {
        return Err(Error::InvalidGraph("need at least one node".into()));
    }
    if 2 * spec.edges > spec.nodes * spec.max_arity {
        return Err(Error::InvalidGraph(format!(
            "{} edges cannot fit on {} nodes with arity {}",
            spec.edges, spec.nodes, spec.max_arity
        )));
    }
    loop {
        let mut pairs = Vec::with_capacity(spec.edges);
        for _ in 0..spec.edges {
            let a = rng.gen_range(0..spec.nodes);
            let b = if spec.nodes == 1 || rng.gen_bool(spec.self_edge_prob) {
                a
            } else {
                let b = rng.gen_range(0..spec.nodes - 1);
                if b >= a {
                    b + 1
                } else {
                    b
                }
            };
            pairs.push((a, b));
        }
        let mut deg = vec![0usize; spec.nodes];
        for &(a, b) in &pairs {
            deg[a] += 1;
            deg[b] += 1;
        }
        if deg.iter().all(|&d| d <= spec.max_arity) {
            return MultiGraph::from_edges(spec.nodes, &pairs);
        }
    }
}

/// Soft model on a random multigraph with between 1 and `max_edges` edges.
pub fn random_soft_model(rng: &mut impl Rng, max_edges: usize) -> Result<MultiGM> {
    let edges = rng.gen_range(1..=max_edges.max(1));
    random_soft_model_with_edges(rng, edges)
}

/// Soft model on a random multigraph with exactly `edges` edges and at most six nodes
/// (more when needed to keep every node at arity 8 or less).
pub fn random_soft_model_with_edges(rng: &mut impl Rng, edges: usize) -> Result<MultiGM> {
    let nodes = rng.gen_range(1..=(edges + 1).min(6)).max(edges.div_ceil(3));
    let spec = GraphSpec { nodes, edges, self_edge_prob: 0.2, max_arity: 8 };
    random_tables(random_multigraph(&spec, rng)?, rng)
}

/// Random labelled tree: node `i > 0` attaches to a random earlier node, random orientation.
pub fn random_tree(rng: &mut impl Rng, nodes: usize) -> Result<MultiGraph> {
    let pairs: Vec<(usize, usize)> = (1..nodes)
        .map(|i| {
            let j = rng.gen_range(0..i);
            if rng.gen_bool(0.5) {
                (i, j)
            } else {
                (j, i)
            }
        })
        .collect();
    MultiGraph::from_edges(nodes.max(1), &pairs)
}

/// Matching model of a weighted bipartite graph with `rows <= cols`: rows
/// and columns become nodes, each present entry an edge (row tail, column
/// head). Rows select exactly one edge and carry its weight; columns accept
/// exactly one selection when the matrix is square and at most one otherwise.
/// The partition function is [`permanent`].
pub fn matching_model(weights: &[Vec<Option<f64>>]) -> Result<MultiGM> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if weights.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidGraph("ragged weight matrix".into()));
    }
    if rows > cols {
        return Err(Error::InvalidGraph(format!("{rows} rows exceed {cols} columns")));
    }
    let square = rows == cols;
    let mut b = GraphBuilder::new();
    let r: Vec<NodeId> = (0..rows).map(|i| b.add_node(format!("r{i}"))).collect();
    let c: Vec<NodeId> = (0..cols).map(|j| b.add_node(format!("c{j}"))).collect();
    for (i, row) in weights.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            if let Some(w) = w {
                if !(w.is_finite() && *w > 0.0) {
                    return Err(Error::InvalidGraph(format!("weight ({i}, {j}) must be positive")));
                }
                b.add_edge(format!("m{i}_{j}"), r[i], c[j])?;
            }
        }
    }
    let graph = b.build();
    let row_of: Vec<bool> = graph.node_ids().map(|n| (n.0 as usize) < rows).collect();
    MultiGM::from_fn(graph.clone(), |n, vars| {
        let mut t = vec![0.0; 1 << vars.len()];
        if !square && !row_of[n.0 as usize] {
            t[0] = 1.0;
        }
        for (k, d) in vars.iter().enumerate() {
            t[1 << k] = if row_of[n.0 as usize] {
                let name = graph.edge_name(d.edge).unwrap();
                let (i, j) = parse_matching_edge(name);
                weights[i][j].unwrap()
            } else {
                1.0
            };
        }
        t
    })
}

fn parse_matching_edge(name: &str) -> (usize, usize) {
    let (i, j) = name[1..].split_once('_').unwrap();
    (i.parse().unwrap(), j.parse().unwrap())
}

/// Sum over injective row-to-column maps of the product of selected weights
/// (the permanent for square matrices); absent entries are zero.
pub fn permanent(weights: &[Vec<Option<f64>>]) -> f64 {
    fn rec(w: &[Vec<Option<f64>>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 1.0;
        }
        let mut acc = 0.0;
        for j in 0..w[row].len() {
            if let (false, Some(v)) = (used[j], w[row][j]) {
                used[j] = true;
                acc += v * rec(w, row + 1, used);
                used[j] = false;
            }
        }
        acc
    }
    let cols = weights.first().map_or(0, Vec::len);
    if weights.len() > cols {
        return 0.0;
    }
    rec(weights, 0, &mut vec![false; cols])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matching_partition_is_permanent() {
        let ones = vec![vec![Some(1.0); 2]; 2];
        let m = matching_model(&ones).unwrap();
        assert_eq!(m.partition_exact().unwrap(), 2.0);
        assert_eq!(permanent(&ones), 2.0);
        let w = vec![vec![Some(1.0), Some(2.0), None], vec![Some(3.0), None, Some(4.0)], vec![None, Some(5.0), Some(6.0)]];
        let m = matching_model(&w).unwrap();
        assert!((m.partition_exact().unwrap() - permanent(&w)).abs() < 1e-12);
        assert_eq!(permanent(&w), 1.0 * 4.0 * 5.0 + 2.0 * 3.0 * 6.0);
        let rect = vec![vec![Some(1.0), Some(2.0), Some(3.0)], vec![Some(1.0), None, Some(1.0)]];
        let m = matching_model(&rect).unwrap();
        assert_eq!(permanent(&rect), 2.0 + 1.0 + 2.0 + 3.0);
        assert!((m.partition_exact().unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn generators_respect_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = random_soft_model(&mut rng, 8).unwrap();
            assert!(m.is_soft() && m.num_edges() <= 8);
            assert!(m.factors().all(|f| f.arity() <= 8));
            let t = random_tree(&mut rng, 6).unwrap();
            assert!(t.is_forest() && t.num_edges() == 5 && t.connected_components() == 1);
        }
    }
}
