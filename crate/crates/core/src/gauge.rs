//! Gauge transformations in the positive `x`-parameterisation.
//!
//! Every directed edge `d` carries a positive value `x_d`. The 2×2 gauge
//! matrix of `d` is built from `(x_d, x_{reverse(d)})`; its sibling uses the
//! same formula with the arguments swapped, so `G(p, q)ᵀ · G(q, p) = 1`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Config, MultiGM};
use crate::multigraph::{DirectedEdge, EdgeId, MultiGraph, NodeId, Polarity};

/// Smallest gauge component accepted by [`gauge_matrix`].
pub const MIN_GAUGE: f64 = 1e-12;

/// Strictly positive value per directed edge, stored as `[α+, α-]` pairs in edge-id order.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeVector {
    edges: Vec<EdgeId>,
    values: Vec<f64>,
}

impl GaugeVector {
    pub fn new(graph: &MultiGraph, values: Vec<f64>) -> Result<Self> {
        let edges: Vec<EdgeId> = graph.edge_ids().collect();
        if values.len() != 2 * edges.len() {
            return Err(Error::SizeMismatch { expected: 2 * edges.len(), got: values.len() });
        }
        let x = Self { edges, values };
        x.validate()?;
        Ok(x)
    }

    pub fn uniform(graph: &MultiGraph, t: f64) -> Result<Self> {
        Self::new(graph, vec![t; 2 * graph.num_edges()])
    }

    pub fn from_fn(graph: &MultiGraph, mut f: impl FnMut(DirectedEdge) -> f64) -> Result<Self> {
        Self::new(graph, graph.directed_edges().map(&mut f).collect())
    }

    /// Components drawn log-uniformly from `[lo, hi]`.
    pub fn random_log_uniform(graph: &MultiGraph, rng: &mut impl Rng, lo: f64, hi: f64) -> Self {
        Self::random_log_uniform_on(&graph.edge_ids().collect::<Vec<_>>(), rng, lo, hi)
    }

    /// Same as [`GaugeVector::random_log_uniform`] over an explicit ascending edge list.
    pub fn random_log_uniform_on(edges: &[EdgeId], rng: &mut impl Rng, lo: f64, hi: f64) -> Self {
        let (a, b) = (lo.ln(), hi.ln());
        let values = (0..2 * edges.len()).map(|_| rng.gen_range(a..=b).exp()).collect();
        Self { edges: edges.to_vec(), values }
    }

    fn validate(&self) -> Result<()> {
        match self.values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            Some(i) => Err(Error::InvalidGauge(format!("component {i} = {}", self.values[i]))),
            None => Ok(()),
        }
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn slot(&self, d: DirectedEdge) -> Result<usize> {
        let i = self.edges.binary_search(&d.edge).map_err(|_| Error::UnknownDirectedEdge(d))?;
        Ok(2 * i + usize::from(d.polarity == Polarity::Minus))
    }

    pub fn get(&self, d: DirectedEdge) -> Result<f64> {
        Ok(self.values[self.slot(d)?])
    }

    pub fn set(&mut self, d: DirectedEdge, v: f64) -> Result<()> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidGauge(format!("{d} = {v}")));
        }
        let s = self.slot(d)?;
        self.values[s] = v;
        Ok(())
    }

    /// `(x_{α+}, x_{α-})`.
    pub fn pair(&self, e: EdgeId) -> Result<(f64, f64)> {
        Ok((self.get(DirectedEdge::plus(e))?, self.get(DirectedEdge::minus(e))?))
    }

    /// Edge marginal `x+ x- / (1 + x+ x-)`.
    pub fn edge_beta(&self, e: EdgeId) -> Result<f64> {
        let (p, q) = self.pair(e)?;
        Ok(p * q / (1.0 + p * q))
    }

    /// Values at the given node's slots, in incidence order.
    pub fn local(&self, graph: &MultiGraph, node: NodeId) -> Result<Vec<f64>> {
        graph.incidence(node)?.iter().map(|&d| self.get(d)).collect()
    }

    /// Keeps only the edges present in `graph` (used after contraction).
    pub fn restrict(&self, graph: &MultiGraph) -> Result<Self> {
        Self::from_fn(graph, |d| self.get(d).unwrap_or(f64::NAN))
    }

    pub fn max_abs_log(&self) -> f64 {
        self.values.iter().map(|v| v.ln().abs()).fold(0.0, f64::max)
    }
}

/// Rows indexed by the new bit `σ`, columns by the summed bit `ς`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaugeMatrix(pub [[f64; 2]; 2]);

impl GaugeMatrix {
    pub fn transpose_times(&self, other: &GaugeMatrix) -> [[f64; 2]; 2] {
        let (a, b) = (&self.0, &other.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[0][i] * b[0][j] + a[1][i] * b[1][j];
            }
        }
        out
    }

    /// Largest entrywise deviation of `selfᵀ · other` from the identity.
    pub fn orthogonality_error(&self, other: &GaugeMatrix) -> f64 {
        let p = self.transpose_times(other);
        let mut err: f64 = 0.0;
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                err = err.max((v - id).abs());
            }
        }
        err
    }
}

/// Gauge matrix of a directed edge with value `x_own` whose sibling has `x_sib`.
pub fn gauge_matrix(x_own: f64, x_sib: f64) -> Result<GaugeMatrix> {
    if !(x_own >= MIN_GAUGE && x_sib >= MIN_GAUGE && x_own.is_finite() && x_sib.is_finite()) {
        return Err(Error::InvalidGauge(format!("gauge matrix needs x >= {MIN_GAUGE:e}, got ({x_own}, {x_sib})")));
    }
    let prod = x_own * x_sib;
    let c = prod.powf(0.25) * (1.0 + prod).sqrt();
    let (so, ss) = (x_own.sqrt(), x_sib.sqrt());
    Ok(GaugeMatrix([[ss / c, x_own * ss / c], [-x_sib * so / c, so / c]]))
}

/// `w[s] = ∏_{i ∈ s} xs[i]` for every subset bitmask `s`.
pub(crate) fn monomial_weights(xs: &[f64]) -> Vec<f64> {
    let mut w = vec![1.0; 1 << xs.len()];
    for s in 1..w.len() {
        let low = s.trailing_zeros() as usize;
        w[s] = w[s & (s - 1)] * xs[low];
    }
    w
}

/// Node polynomial `h_a(x_a) = Σ_ς f_a(ς) ∏ x^ς` at local values `xs`.
pub fn node_polynomial(values: &[f64], xs: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), 1 << xs.len());
    values.iter().zip(monomial_weights(xs)).map(|(f, w)| f * w).sum()
}

pub fn h_node(m: &MultiGM, node: NodeId, x: &GaugeVector) -> Result<f64> {
    let xs = x.local(m.graph(), node)?;
    Ok(node_polynomial(m.factor(node)?.values(), &xs))
}

/// `log z(x) = Σ_a log h_a - Σ_α log(1 + x+ x-)`.
pub fn log_gauge_function(m: &MultiGM, x: &GaugeVector) -> Result<f64> {
    let mut acc = 0.0;
    for n in m.graph().node_ids() {
        acc += h_node(m, n, x)?.ln();
    }
    for e in m.graph().edge_ids() {
        let (p, q) = x.pair(e)?;
        acc -= (p * q).ln_1p();
    }
    Ok(acc)
}

/// The Gauge Function `z(x) = ∏_a h_a(x_a) / ∏_α (1 + x+ x-)`.
pub fn gauge_function(m: &MultiGM, x: &GaugeVector) -> Result<f64> {
    let mut num = 1.0;
    for n in m.graph().node_ids() {
        num *= h_node(m, n, x)?;
    }
    let mut den = 1.0;
    for e in m.graph().edge_ids() {
        let (p, q) = x.pair(e)?;
        den *= 1.0 + p * q;
    }
    Ok(num / den)
}

/// Per-slot coloring of node `node` induced by the edge configuration `sigma`.
pub fn node_coloring(m: &MultiGM, node: NodeId, sigma: &Config) -> Result<Vec<bool>> {
    let g = m.graph();
    if sigma.len() != g.num_edges() {
        return Err(Error::SizeMismatch { expected: g.num_edges(), got: sigma.len() });
    }
    let pos: BTreeMap<EdgeId, usize> = g.edge_ids().enumerate().map(|(i, e)| (e, i)).collect();
    Ok(g.incidence(node)?.iter().map(|d| sigma.0[pos[&d.edge]]).collect())
}

/// `Q_a(x_a; σ_a)`: the node factor of the σ-term of the gauge series.
pub fn q_node(m: &MultiGM, x: &GaugeVector, node: NodeId, colored: &[bool]) -> Result<f64> {
    let vars = m.graph().incidence(node)?;
    if colored.len() != vars.len() {
        return Err(Error::SizeMismatch { expected: vars.len(), got: colored.len() });
    }
    let xs = x.local(m.graph(), node)?;
    let mut prefactor = 1.0;
    let mut shifts = Vec::with_capacity(vars.len());
    for (&d, &c) in vars.iter().zip(colored) {
        let (own, sib) = (x.get(d)?, x.get(d.reversed())?);
        let prod = own * sib;
        if c {
            prefactor *= (1.0 + prod) / prod;
        }
        shifts.push(prod / (1.0 + prod));
    }
    let f = m.factor(node)?.values();
    let w = monomial_weights(&xs);
    let mut sum = 0.0;
    for (s, (&fv, &wv)) in f.iter().zip(&w).enumerate() {
        let mut t = fv * wv;
        for (i, &c) in colored.iter().enumerate() {
            if c {
                let bit = (s >> i & 1) as f64;
                t *= bit - shifts[i];
            }
        }
        sum += t;
    }
    Ok(prefactor * sum)
}

/// One term `z(σ|x)` of the gauge-transformed series.
pub fn z_sigma(m: &MultiGM, x: &GaugeVector, sigma: &Config) -> Result<f64> {
    let g = m.graph();
    if sigma.len() != g.num_edges() {
        return Err(Error::SizeMismatch { expected: g.num_edges(), got: sigma.len() });
    }
    let mut acc = 1.0;
    for (e, &s) in g.edge_ids().zip(&sigma.0) {
        let (p, q) = x.pair(e)?;
        let prod = p * q;
        acc *= if s { prod } else { 1.0 } / (1.0 + prod);
    }
    for n in g.node_ids() {
        acc *= q_node(m, x, n, &node_coloring(m, n, sigma)?)?;
    }
    Ok(acc)
}

/// Factor tables after the gauge transformation; entries may be negative.
#[derive(Clone, Debug)]
pub struct GaugedFactors {
    edges: Vec<EdgeId>,
    tables: BTreeMap<NodeId, (Vec<DirectedEdge>, Vec<f64>)>,
}

impl GaugedFactors {
    pub fn table(&self, node: NodeId) -> Option<&[f64]> {
        self.tables.get(&node).map(|(_, v)| v.as_slice())
    }

    fn positions(&self) -> Vec<(&[f64], Vec<usize>)> {
        self.tables
            .values()
            .map(|(vars, vals)| {
                let pos = vars.iter().map(|d| self.edges.binary_search(&d.edge).unwrap()).collect();
                (vals.as_slice(), pos)
            })
            .collect()
    }

    fn product_at(nodes: &[(&[f64], Vec<usize>)], mask: u64) -> f64 {
        nodes
            .iter()
            .map(|(vals, pos)| {
                let idx = pos.iter().enumerate().fold(0usize, |acc, (i, &p)| acc | ((mask >> p & 1) as usize) << i);
                vals[idx]
            })
            .product()
    }

    /// `∏_a f̃_a(σ_a)` for one configuration.
    pub fn term(&self, sigma: &Config) -> Result<f64> {
        if sigma.len() != self.edges.len() {
            return Err(Error::SizeMismatch { expected: self.edges.len(), got: sigma.len() });
        }
        Ok(Self::product_at(&self.positions(), sigma.index()))
    }

    /// `Σ_σ ∏_a f̃_a(σ_a)`.
    pub fn sum(&self) -> f64 {
        let nodes = self.positions();
        (0..1u64 << self.edges.len()).map(|m| Self::product_at(&nodes, m)).sum()
    }
}

/// `f̃_a(σ_a) = Σ_ς f_a(ς) ∏_d G_d(σ_d, ς_d)`, applied one slot at a time.
pub fn transform_factors(m: &MultiGM, x: &GaugeVector) -> Result<GaugedFactors> {
    transform_factors_with(m, x, gauge_matrix)
}

pub(crate) fn transform_factors_with(
    m: &MultiGM,
    x: &GaugeVector,
    matrix: impl Fn(f64, f64) -> Result<GaugeMatrix>,
) -> Result<GaugedFactors> {
    let mut tables = BTreeMap::new();
    for f in m.factors() {
        let mut vals = f.values().to_vec();
        for (i, &d) in f.vars().iter().enumerate() {
            let g = matrix(x.get(d)?, x.get(d.reversed())?)?.0;
            let bit = 1usize << i;
            for s in 0..vals.len() {
                if s & bit == 0 {
                    let (v0, v1) = (vals[s], vals[s | bit]);
                    vals[s] = g[0][0] * v0 + g[0][1] * v1;
                    vals[s | bit] = g[1][0] * v0 + g[1][1] * v1;
                }
            }
        }
        tables.insert(f.node(), (f.vars().to_vec(), vals));
    }
    Ok(GaugedFactors { edges: m.graph().edge_ids().collect(), tables })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multigraph::MultiGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair_model() -> MultiGM {
        let g = MultiGraph::from_edges(2, &[(0, 1)]).unwrap();
        MultiGM::from_fn(g, |n, _| if n.0 == 0 { vec![1.0, 2.0] } else { vec![3.0, 4.0] }).unwrap()
    }

    fn self_edge_model() -> MultiGM {
        let g = MultiGraph::from_edges(1, &[(0, 0)]).unwrap();
        MultiGM::from_fn(g, |_, _| vec![2.0, 5.0, 5.0, 3.0]).unwrap()
    }

    #[test]
    fn matrix_at_unit_gauge() {
        let g = gauge_matrix(1.0, 1.0).unwrap().0;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let want = [[r, r], [-r, r]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matrix_identity_limit() {
        let g = gauge_matrix(1e-10, 1e-10).unwrap().0;
        assert!((g[0][0] - 1.0).abs() < 1e-9 && (g[1][1] - 1.0).abs() < 1e-9);
        assert!(g[0][1].abs() < 1e-9 && g[1][0].abs() < 1e-9);
        assert!(gauge_matrix(1e-13, 1.0).is_err());
        assert!(gauge_matrix(1.0, -2.0).is_err());
    }

    #[test]
    fn sibling_matrices_are_orthogonal() {
        let a = gauge_matrix(2.0, 0.5).unwrap();
        let b = gauge_matrix(0.5, 2.0).unwrap();
        assert!(a.orthogonality_error(&b) < 1e-14);
    }

    #[test]
    fn h_node_examples() {
        let m = pair_model();
        let g = m.graph();
        let x = GaugeVector::new(g, vec![3.0, 5.0]).unwrap();
        assert_eq!(h_node(&m, NodeId(0), &x).unwrap(), 7.0);
        let s = self_edge_model();
        let x1 = GaugeVector::uniform(s.graph(), 1.0).unwrap();
        assert_eq!(h_node(&s, NodeId(0), &x1).unwrap(), 15.0);
        let tiny = GaugeVector::uniform(s.graph(), 1e-12).unwrap();
        assert!((h_node(&s, NodeId(0), &tiny).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gauge_function_pair_bp_point() {
        let m = pair_model();
        let x = GaugeVector::new(m.graph(), vec![3.0, 2.0]).unwrap();
        assert!((gauge_function(&m, &x).unwrap() - 11.0).abs() < 1e-12);
        assert!((log_gauge_function(&m, &x).unwrap() - 11f64.ln()).abs() < 1e-12);
        let tiny = GaugeVector::uniform(m.graph(), 1e-9).unwrap();
        assert!((gauge_function(&m, &tiny).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn transformed_pair_sums_to_z() {
        let m = pair_model();
        let x = GaugeVector::uniform(m.graph(), 1.0).unwrap();
        let t = transform_factors(&m, &x).unwrap();
        assert!((t.sum() - 11.0).abs() < 1e-12);
    }

    #[test]
    fn transform_identity_limit() {
        let m = self_edge_model();
        let x = GaugeVector::uniform(m.graph(), 1e-8).unwrap();
        let t = transform_factors(&m, &x).unwrap();
        for (a, b) in t.table(NodeId(0)).unwrap().iter().zip(m.factor(NodeId(0)).unwrap().values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn q_node_hand_expansion() {
        // f = (1, 2) on a single slot with x = 3 and sibling 0.7.
        let m = pair_model();
        let x = GaugeVector::new(m.graph(), vec![3.0, 0.7]).unwrap();
        let prod = 3.0 * 0.7;
        let beta = prod / (1.0 + prod);
        let want = (1.0 + prod) / prod * (1.0 * (0.0 - beta) + 2.0 * 3.0 * (1.0 - beta));
        let got = q_node(&m, &x, NodeId(0), &[true]).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs());
        assert_eq!(q_node(&m, &x, NodeId(0), &[false]).unwrap(), h_node(&m, NodeId(0), &x).unwrap());
    }

    #[test]
    fn z_sigma_zero_is_gauge_function() {
        let m = self_edge_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x = GaugeVector::random_log_uniform(m.graph(), &mut rng, 0.1, 10.0);
            let a = z_sigma(&m, &x, &Config::zeros(1)).unwrap();
            let b = gauge_function(&m, &x).unwrap();
            assert!((a - b).abs() <= 1e-13 * b);
        }
    }

    #[test]
    fn z_sigma_matches_transformed_terms() {
        let m = self_edge_model();
        let x = GaugeVector::new(m.graph(), vec![0.4, 2.5]).unwrap();
        let t = transform_factors(&m, &x).unwrap();
        let mut total = 0.0;
        for s in [false, true] {
            let c = Config(vec![s]);
            let a = z_sigma(&m, &x, &c).unwrap();
            let b = t.term(&c).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            total += a;
        }
        assert!((total - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_vector_validation() {
        let g = MultiGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(GaugeVector::new(&g, vec![1.0]).is_err());
        assert!(GaugeVector::new(&g, vec![1.0, 0.0]).is_err());
        assert!(GaugeVector::new(&g, vec![1.0, f64::INFINITY]).is_err());
        let mut x = GaugeVector::uniform(&g, 1.0).unwrap();
        x.set(DirectedEdge::minus(EdgeId(0)), 4.0).unwrap();
        assert_eq!(x.pair(EdgeId(0)).unwrap(), (1.0, 4.0));
        assert!(x.get(DirectedEdge::plus(EdgeId(3))).is_err());
    }
}
