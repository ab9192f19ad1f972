//! Multi-graph graphical models and their brute-force oracles.
//!
//! A [`FactorTable`] is a dense table over the bit-configurations of a node's
//! ordered incident directed edges; bit `i` of the table index is the value of
//! the `i`-th directed edge. Exact evaluation reads the undirected edge bit
//! into every slot it owns, so a self-edge feeds the same bit twice.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::multigraph::{DirectedEdge, EdgeId, MultiGraph, NodeId};

/// Default cap on `|E|` for exhaustive enumeration.
pub const ENUMERATION_GUARD: usize = 24;

/// Cap on the number of variables of a single dense table produced by contraction.
pub const MAX_TABLE_VARS: usize = 22;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorTable {
    node: NodeId,
    vars: Vec<DirectedEdge>,
    values: Vec<f64>,
}

impl FactorTable {
    pub fn new(node: NodeId, vars: Vec<DirectedEdge>, values: Vec<f64>) -> Result<Self> {
        if vars.len() > 62 || values.len() != 1usize << vars.len() {
            return Err(Error::InvalidFactor {
                node,
                reason: format!("{} entries for {} variables", values.len(), vars.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidFactor { node, reason: format!("entry {bad} is not a finite nonnegative number") });
        }
        Ok(Self { node, vars, values })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn vars(&self) -> &[DirectedEdge] {
        &self.vars
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn is_soft(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn position(&self, d: DirectedEdge) -> Option<usize> {
        self.vars.iter().position(|&v| v == d)
    }
}

/// Edge configuration `σ ∈ {0,1}^E`, aligned with ascending edge ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Config(pub Vec<bool>);

impl Config {
    pub fn zeros(n: usize) -> Self {
        Config(vec![false; n])
    }

    /// Bit `j` of `index` is the value of the `j`-th edge.
    pub fn from_index(index: u64, n: usize) -> Self {
        Config((0..n).map(|j| index >> j & 1 == 1).collect())
    }

    pub fn index(&self) -> u64 {
        self.0.iter().enumerate().fold(0, |acc, (j, &b)| acc | (u64::from(b) << j))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Maximum-weight configuration found by enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    /// `-log max_σ f(σ)`.
    pub energy: f64,
    pub config: Config,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiGM {
    graph: MultiGraph,
    factors: BTreeMap<NodeId, FactorTable>,
}

impl MultiGM {
    pub fn new(graph: MultiGraph, factors: Vec<FactorTable>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for f in factors {
            let node = f.node;
            let inc = graph.incidence(node)?;
            if inc != f.vars.as_slice() {
                return Err(Error::InvalidFactor {
                    node,
                    reason: "variable list differs from the node's incidence list".into(),
                });
            }
            if map.insert(node, f).is_some() {
                return Err(Error::InvalidFactor { node, reason: "duplicate factor".into() });
            }
        }
        if let Some(missing) = graph.node_ids().find(|n| !map.contains_key(n)) {
            return Err(Error::InvalidFactor { node: missing, reason: "missing factor".into() });
        }
        Ok(Self { graph, factors: map })
    }

    /// Builds tables by calling `table(node, vars)` for every node.
    pub fn from_fn(graph: MultiGraph, mut table: impl FnMut(NodeId, &[DirectedEdge]) -> Vec<f64>) -> Result<Self> {
        let factors = graph
            .node_ids()
            .map(|n| {
                let vars = graph.incidence(n)?.to_vec();
                let values = table(n, &vars);
                FactorTable::new(n, vars, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(graph, factors)
    }

    pub fn graph(&self) -> &MultiGraph {
        &self.graph
    }

    pub fn factor(&self, n: NodeId) -> Result<&FactorTable> {
        self.factors.get(&n).ok_or(Error::UnknownNode(n))
    }

    pub fn factors(&self) -> impl Iterator<Item = &FactorTable> {
        self.factors.values()
    }

    pub fn num_edges(&self) -> usize {
        self.graph.num_edges()
    }

    pub fn is_soft(&self) -> bool {
        self.factors.values().all(FactorTable::is_soft)
    }

    /// Per node: table reference plus, for each slot, the position of its edge in edge order.
    fn slot_positions(&self) -> Vec<(&FactorTable, Vec<usize>)> {
        let edge_pos: BTreeMap<EdgeId, usize> = self.graph.edge_ids().enumerate().map(|(i, e)| (e, i)).collect();
        self.factors
            .values()
            .map(|f| (f, f.vars.iter().map(|d| edge_pos[&d.edge]).collect()))
            .collect()
    }

    fn weight_of_index(nodes: &[(&FactorTable, Vec<usize>)], mask: u64) -> f64 {
        let mut w = 1.0;
        for (f, pos) in nodes {
            let mut idx = 0usize;
            for (i, &p) in pos.iter().enumerate() {
                idx |= ((mask >> p & 1) as usize) << i;
            }
            w *= f.values[idx];
        }
        w
    }

    /// `∏_a f_a(σ_a)`.
    pub fn evaluate_weight(&self, sigma: &Config) -> Result<f64> {
        if sigma.len() != self.num_edges() {
            return Err(Error::SizeMismatch { expected: self.num_edges(), got: sigma.len() });
        }
        Ok(Self::weight_of_index(&self.slot_positions(), sigma.index()))
    }

    fn check_guard(&self, guard: usize) -> Result<()> {
        let edges = self.num_edges();
        if edges > guard || edges > 62 {
            return Err(Error::EnumerationGuard { edges, guard });
        }
        Ok(())
    }

    /// `Z = Σ_σ f(σ)` with the default guard.
    pub fn partition_exact(&self) -> Result<f64> {
        self.partition_exact_with_guard(ENUMERATION_GUARD)
    }

    /// Sums configurations in ascending index order.
    pub fn partition_exact_with_guard(&self, guard: usize) -> Result<f64> {
        self.check_guard(guard)?;
        let nodes = self.slot_positions();
        let total = 1u64 << self.num_edges();
        Ok((0..total).map(|mask| Self::weight_of_index(&nodes, mask)).sum())
    }

    /// Same sum split over `threads` contiguous index ranges.
    pub fn partition_exact_parallel(&self, threads: usize) -> Result<f64> {
        self.check_guard(ENUMERATION_GUARD)?;
        let nodes = self.slot_positions();
        let total = 1u64 << self.num_edges();
        let threads = threads.clamp(1, 64) as u64;
        let chunk = total.div_ceil(threads);
        let partials: Vec<f64> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let nodes = &nodes;
                    s.spawn(move || {
                        let lo = (t * chunk).min(total);
                        let hi = ((t + 1) * chunk).min(total);
                        (lo..hi).map(|m| Self::weight_of_index(nodes, m)).sum::<f64>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        Ok(partials.into_iter().sum())
    }

    /// `E = -log max_σ f(σ)`; ties go to the smallest configuration index.
    pub fn map_energy_exact(&self) -> Result<MapResult> {
        self.check_guard(ENUMERATION_GUARD)?;
        let nodes = self.slot_positions();
        let total = 1u64 << self.num_edges();
        let mut best = (0u64, 0.0f64);
        for mask in 0..total {
            let w = Self::weight_of_index(&nodes, mask);
            if w > best.1 {
                best = (mask, w);
            }
        }
        if best.1 <= 0.0 {
            return Err(Error::AllWeightsZero);
        }
        Ok(MapResult { energy: -best.1.ln(), config: Config::from_index(best.0, self.num_edges()), weight: best.1 })
    }

    /// Replaces every entry `t` by `max(t, eps * max entry of its table)`.
    pub fn soften(&self, eps: f64) -> Result<MultiGM> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::InvalidSoftening(eps));
        }
        let mut out = self.clone();
        for f in out.factors.values_mut() {
            let floor = eps * f.max_entry();
            if floor <= 0.0 {
                return Err(Error::ZeroTable(f.node));
            }
            for v in &mut f.values {
                *v = v.max(floor);
            }
        }
        Ok(out)
    }

    /// Exact elimination of edge `e`; preserves the partition function.
    pub fn contract_model(&self, e: EdgeId) -> Result<MultiGM> {
        let (tail, head) = self.graph.endpoints(e)?;
        let graph = self.graph.contract_edge(e)?;
        let mut factors = self.factors.clone();
        if tail == head {
            let f = factors.remove(&tail).unwrap();
            factors.insert(tail, contract_self_table(&f, e)?);
        } else {
            let (survivor, absorbed) = if tail < head { (tail, head) } else { (head, tail) };
            let fs = factors.remove(&survivor).unwrap();
            let fo = factors.remove(&absorbed).unwrap();
            factors.insert(survivor, merge_tables(&fs, &fo, e)?);
        }
        let out = MultiGM { graph, factors };
        debug_assert!(out.graph.node_ids().all(|n| out.graph.incidence(n).unwrap() == out.factors[&n].vars.as_slice()));
        Ok(out)
    }

    /// Contract every edge in `order`; returns the resulting scalar.
    pub fn contract_all(&self, order: &[EdgeId]) -> Result<f64> {
        self.graph.validate_order(order)?;
        let mut m = self.clone();
        for &e in order {
            m = m.contract_model(e)?;
        }
        Ok(m.edgeless_value())
    }

    /// Product of the constant tables; equals `Z` when no edges remain.
    pub fn edgeless_value(&self) -> f64 {
        self.factors.values().map(|f| f.values[0]).product()
    }
}

/// Inserts `bit` at position `pos` of `index`.
#[inline]
pub(crate) fn insert_bit(index: usize, pos: usize, bit: usize) -> usize {
    let low = index & ((1 << pos) - 1);
    let high = index >> pos;
    low | (bit << pos) | (high << (pos + 1))
}

fn check_arity(node: NodeId, vars: usize) -> Result<()> {
    if vars > MAX_TABLE_VARS {
        return Err(Error::TooManyVariables { node, vars, cap: MAX_TABLE_VARS });
    }
    Ok(())
}

fn merge_tables(fs: &FactorTable, fo: &FactorTable, e: EdgeId) -> Result<FactorTable> {
    let ps = fs.vars.iter().position(|d| d.edge == e).expect("survivor holds the edge");
    let po = fo.vars.iter().position(|d| d.edge == e).expect("absorbed node holds the edge");
    let mut vars: Vec<DirectedEdge> = fs.vars.iter().copied().filter(|d| d.edge != e).collect();
    let ks = vars.len();
    vars.extend(fo.vars.iter().copied().filter(|d| d.edge != e));
    check_arity(fs.node, vars.len())?;
    let mask_s = (1usize << ks) - 1;
    let values = (0..1usize << vars.len())
        .map(|k| {
            let (a, b) = (k & mask_s, k >> ks);
            fs.values[insert_bit(a, ps, 0)] * fo.values[insert_bit(b, po, 0)]
                + fs.values[insert_bit(a, ps, 1)] * fo.values[insert_bit(b, po, 1)]
        })
        .collect();
    FactorTable::new(fs.node, vars, values)
}

fn contract_self_table(f: &FactorTable, e: EdgeId) -> Result<FactorTable> {
    let slots: Vec<usize> = f.vars.iter().enumerate().filter(|(_, d)| d.edge == e).map(|(i, _)| i).collect();
    let (p, q) = (slots[0], slots[1]);
    let vars: Vec<DirectedEdge> = f.vars.iter().copied().filter(|d| d.edge != e).collect();
    check_arity(f.node, vars.len())?;
    let values = (0..1usize << vars.len())
        .map(|k| {
            let base = insert_bit(insert_bit(k, p, 0), q, 0);
            f.values[base] + f.values[base | 1 << p | 1 << q]
        })
        .collect();
    FactorTable::new(f.node, vars, values)
}
