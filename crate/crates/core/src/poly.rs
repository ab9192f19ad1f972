//! Multilinear gauge polynomials kept in factored form `h(x) = ∏_a h_a(x_a)`.
//!
//! Each [`NodePoly`] is a sparse map from a subset of its ordered variables
//! (bitmask) to a coefficient. Zero coefficients are never stored, so two
//! polynomials are identical exactly when their maps are.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauge::GaugeVector;
use crate::model::{FactorTable, MultiGM};
use crate::multigraph::{DirectedEdge, EdgeId, NodeId};

/// Default cap on the variable count of a single node polynomial.
pub const MAX_POLY_VARS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct NodePoly {
    node: NodeId,
    vars: Vec<DirectedEdge>,
    coeffs: BTreeMap<u64, f64>,
}

/// Drops bits at `positions` (ascending) from `mask`, compacting the rest.
fn remove_bits(mask: u64, positions: &[usize]) -> u64 {
    let mut out = 0u64;
    let mut j = 0;
    let mut k = 0;
    for i in 0..64 {
        if k < positions.len() && positions[k] == i {
            k += 1;
            continue;
        }
        out |= (mask >> i & 1) << j;
        j += 1;
    }
    out
}

impl NodePoly {
    pub fn new(node: NodeId, vars: Vec<DirectedEdge>, coeffs: BTreeMap<u64, f64>) -> Result<Self> {
        if vars.len() > MAX_POLY_VARS {
            return Err(Error::TooManyVariables { node, vars: vars.len(), cap: MAX_POLY_VARS });
        }
        let coeffs = coeffs.into_iter().filter(|&(_, c)| c != 0.0).collect();
        Ok(Self { node, vars, coeffs })
    }

    /// Coefficient of subset `S` is the table entry at the indicator of `S`.
    pub fn from_factor(f: &FactorTable) -> Result<Self> {
        let coeffs = f.values().iter().enumerate().map(|(s, &v)| (s as u64, v)).collect();
        Self::new(f.node(), f.vars().to_vec(), coeffs)
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn vars(&self) -> &[DirectedEdge] {
        &self.vars
    }

    pub fn coeffs(&self) -> &BTreeMap<u64, f64> {
        &self.coeffs
    }

    pub fn coeff(&self, mask: u64) -> f64 {
        self.coeffs.get(&mask).copied().unwrap_or(0.0)
    }

    pub fn position(&self, d: DirectedEdge) -> Option<usize> {
        self.vars.iter().position(|&v| v == d)
    }

    fn locals(&self, x: &GaugeVector) -> Result<Vec<f64>> {
        self.vars.iter().map(|&d| x.get(d)).collect()
    }

    fn eval_locals(&self, xs: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|(&s, &c)| {
                let mut t = c;
                let mut rest = s;
                while rest != 0 {
                    t *= xs[rest.trailing_zeros() as usize];
                    rest &= rest - 1;
                }
                t
            })
            .sum()
    }

    pub fn eval(&self, x: &GaugeVector) -> Result<f64> {
        Ok(self.eval_locals(&self.locals(x)?))
    }

    /// Sums of monomials grouped by the bits at `positions`, other variables evaluated at `xs`.
    fn grouped_eval(&self, xs: &[f64], positions: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; 1 << positions.len()];
        let fixed: u64 = positions.iter().map(|&p| 1u64 << p).sum();
        for (&s, &c) in &self.coeffs {
            let key = positions.iter().enumerate().fold(0usize, |k, (i, &p)| k | ((s >> p & 1) as usize) << i);
            let mut t = c;
            let mut rest = s & !fixed;
            while rest != 0 {
                t *= xs[rest.trailing_zeros() as usize];
                rest &= rest - 1;
            }
            out[key] += t;
        }
        out
    }

    /// Coefficient polynomials `(H0, H1)` of `self = H0 + H1 · x_d`.
    pub fn split(&self, d: DirectedEdge) -> Result<(NodePoly, NodePoly)> {
        let p = self.position(d).ok_or(Error::UnknownDirectedEdge(d))?;
        let vars: Vec<DirectedEdge> = self.vars.iter().copied().filter(|&v| v != d).collect();
        let (mut h0, mut h1) = (BTreeMap::new(), BTreeMap::new());
        for (&s, &c) in &self.coeffs {
            let target = if s >> p & 1 == 1 { &mut h1 } else { &mut h0 };
            target.insert(remove_bits(s, &[p]), c);
        }
        Ok((Self::new(self.node, vars.clone(), h0)?, Self::new(self.node, vars, h1)?))
    }

    /// Product of polynomials over disjoint variable sets; variables of `self` first.
    pub fn product(&self, other: &NodePoly, node: NodeId) -> Result<NodePoly> {
        let shift = self.vars.len();
        let mut vars = self.vars.clone();
        vars.extend_from_slice(&other.vars);
        if vars.len() > MAX_POLY_VARS {
            return Err(Error::TooManyVariables { node, vars: vars.len(), cap: MAX_POLY_VARS });
        }
        let mut coeffs = BTreeMap::new();
        for (&a, &ca) in &self.coeffs {
            for (&b, &cb) in &other.coeffs {
                *coeffs.entry(a | b << shift).or_insert(0.0) += ca * cb;
            }
        }
        Self::new(node, vars, coeffs)
    }

    /// Sum of two polynomials over the same variables.
    pub fn add(&self, other: &NodePoly) -> Result<NodePoly> {
        if self.vars != other.vars {
            return Err(Error::InvalidGraph("adding polynomials over different variables".into()));
        }
        let mut coeffs = self.coeffs.clone();
        for (&s, &c) in &other.coeffs {
            *coeffs.entry(s).or_insert(0.0) += c;
        }
        Self::new(self.node, self.vars.clone(), coeffs)
    }

    /// `(1 + ∂_p ∂_q) P |_{x_p = x_q = 0}`: monomials containing both `p` and `q`
    /// lose them, monomials with exactly one of them vanish.
    pub fn mixed_derivative_at_zero(&self, p: DirectedEdge, q: DirectedEdge) -> Result<NodePoly> {
        let ip = self.position(p).ok_or(Error::UnknownDirectedEdge(p))?;
        let iq = self.position(q).ok_or(Error::UnknownDirectedEdge(q))?;
        let mut pos = [ip, iq];
        pos.sort_unstable();
        let vars: Vec<DirectedEdge> = self.vars.iter().copied().filter(|&v| v != p && v != q).collect();
        let both = 1u64 << ip | 1u64 << iq;
        let mut coeffs: BTreeMap<u64, f64> = BTreeMap::new();
        // untouched monomials first, then the ones that carried x_p x_q
        for (&s, &c) in &self.coeffs {
            if s & both == 0 {
                coeffs.insert(remove_bits(s, &pos), c);
            }
        }
        for (&s, &c) in &self.coeffs {
            if s & both == both {
                *coeffs.entry(remove_bits(s, &pos)).or_insert(0.0) += c;
            }
        }
        Self::new(self.node, vars, coeffs)
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }
}

/// Coefficients of `h` viewed as a quadratic in `(x_{α+}, x_{α-})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadCoeffs {
    pub h00: f64,
    pub h10: f64,
    pub h01: f64,
    pub h11: f64,
}

impl QuadCoeffs {
    pub fn new(h00: f64, h10: f64, h01: f64, h11: f64) -> Self {
        Self { h00, h10, h01, h11 }
    }

    /// `h01 h10 <= h00 h11`, with relative slack `rel_tol` for exact factorisations.
    pub fn satisfies_reduction_condition(&self, rel_tol: f64) -> bool {
        self.h01 * self.h10 <= self.h00 * self.h11 * (1.0 + rel_tol)
    }

    /// `h01 h10 / (h00 h11)`; values above one violate the condition.
    pub fn violation_ratio(&self) -> f64 {
        self.h01 * self.h10 / (self.h00 * self.h11)
    }

    /// Exact elimination value `h00 + h11`.
    pub fn exact_value(&self) -> f64 {
        self.h00 + self.h11
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.h00 * c, self.h10 * c, self.h01 * c, self.h11 * c)
    }
}

/// Product-of-node-polynomials representation of the gauge-function numerator.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredGaugePoly {
    factors: BTreeMap<NodeId, NodePoly>,
    live: Vec<EdgeId>,
}

impl FactoredGaugePoly {
    pub fn from_model(m: &MultiGM) -> Result<Self> {
        let factors = m.factors().map(|f| NodePoly::from_factor(f).map(|p| (f.node(), p))).collect::<Result<_>>()?;
        Ok(Self { factors, live: m.graph().edge_ids().collect() })
    }

    pub fn factors(&self) -> impl Iterator<Item = &NodePoly> {
        self.factors.values()
    }

    pub fn factor(&self, n: NodeId) -> Option<&NodePoly> {
        self.factors.get(&n)
    }

    pub fn live_edges(&self) -> &[EdgeId] {
        &self.live
    }

    fn holder(&self, d: DirectedEdge) -> Result<&NodePoly> {
        self.factors.values().find(|p| p.position(d).is_some()).ok_or(Error::UnknownDirectedEdge(d))
    }

    fn check_live(&self, e: EdgeId) -> Result<()> {
        if self.live.binary_search(&e).is_err() {
            return Err(Error::UnknownEdge(e));
        }
        Ok(())
    }

    /// True when the two slots of `e` sit in different node polynomials.
    pub fn is_normal(&self, e: EdgeId) -> Result<bool> {
        self.check_live(e)?;
        let a = self.holder(DirectedEdge::plus(e))?.node;
        let b = self.holder(DirectedEdge::minus(e))?.node;
        Ok(a != b)
    }

    /// `h(x) = ∏_a h_a(x_a)`.
    pub fn eval(&self, x: &GaugeVector) -> Result<f64> {
        self.factors.values().map(|p| p.eval(x)).product()
    }

    /// `h(x) / ∏_{live α} (1 + x+ x-)`.
    pub fn zeta_eval(&self, x: &GaugeVector) -> Result<f64> {
        let mut den = 1.0;
        for &e in &self.live {
            let (p, q) = x.pair(e)?;
            den *= 1.0 + p * q;
        }
        Ok(self.eval(x)? / den)
    }

    /// Quadratic coefficients in `(x_{α+}, x_{α-})` with every other variable taken from `x`.
    pub fn quad_coeffs(&self, e: EdgeId, x: &GaugeVector) -> Result<QuadCoeffs> {
        self.check_live(e)?;
        let (dp, dq) = (DirectedEdge::plus(e), DirectedEdge::minus(e));
        let a = self.holder(dp)?;
        let b = self.holder(dq)?;
        let mut rest = 1.0;
        for p in self.factors.values() {
            if p.node != a.node && p.node != b.node {
                rest *= p.eval(x)?;
            }
        }
        let raw = if a.node == b.node {
            let ip = a.position(dp).unwrap();
            let iq = a.position(dq).unwrap();
            let g = a.grouped_eval(&a.locals(x)?, &[ip, iq]);
            QuadCoeffs::new(g[0], g[1], g[2], g[3])
        } else {
            let ga = a.grouped_eval(&a.locals(x)?, &[a.position(dp).unwrap()]);
            let gb = b.grouped_eval(&b.locals(x)?, &[b.position(dq).unwrap()]);
            QuadCoeffs::new(ga[0] * gb[0], ga[1] * gb[0], ga[0] * gb[1], ga[1] * gb[1])
        };
        Ok(raw.scaled(rest))
    }

    fn replace(&self, e: EdgeId, removed: &[NodeId], merged: NodePoly) -> Self {
        let mut factors = self.factors.clone();
        for n in removed {
            factors.remove(n);
        }
        factors.insert(merged.node, merged);
        let live = self.live.iter().copied().filter(|&l| l != e).collect();
        Self { factors, live }
    }

    /// The two node polynomials holding `e` as `(survivor, absorbed)`, smaller id first.
    pub(crate) fn endpoints(&self, e: EdgeId) -> Result<(&NodePoly, &NodePoly)> {
        let a = self.holder(DirectedEdge::plus(e))?;
        let b = self.holder(DirectedEdge::minus(e))?;
        Ok(if a.node <= b.node { (a, b) } else { (b, a) })
    }

    pub(crate) fn with_merged(&self, e: EdgeId, merged: NodePoly) -> Self {
        let removed: Vec<NodeId> = self
            .factors
            .values()
            .filter(|p| p.vars.iter().any(|d| d.edge == e))
            .map(|p| p.node)
            .collect();
        self.replace(e, &removed, merged)
    }

    /// Applies `(1 + ∂_{x+} ∂_{x-})` at zero to `h` after multiplying the two
    /// involved node polynomials (a single one for a self-edge).
    pub fn exact_contract(&self, e: EdgeId) -> Result<Self> {
        self.check_live(e)?;
        let (dp, dq) = (DirectedEdge::plus(e), DirectedEdge::minus(e));
        let (s, o) = self.endpoints(e)?;
        let joint = if s.node == o.node { s.clone() } else { s.product(o, s.node)? };
        let merged = joint.mixed_derivative_at_zero(dp, dq)?;
        Ok(self.with_merged(e, merged))
    }

    /// Contract along `order` and return the remaining constant.
    pub fn contract_all(&self, order: &[EdgeId]) -> Result<f64> {
        let mut h = self.clone();
        for &e in order {
            h = h.exact_contract(e)?;
        }
        if !h.live.is_empty() {
            return Err(Error::InvalidOrder(format!("{} edges left uncontracted", h.live.len())));
        }
        Ok(h.factors.values().map(|p| p.coeff(0)).product())
    }

    /// Random positive evaluation points (log-uniform in `[0.1, 10]`) and the
    /// resulting coefficients of edge `e`.
    pub fn sample_quad_coeffs(&self, e: EdgeId, n_samples: usize, seed: u64) -> Result<Vec<QuadCoeffs>> {
        self.check_live(e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = self.live.clone();
        (0..n_samples)
            .map(|_| {
                let x = GaugeVector::random_log_uniform_on(&edges, &mut rng, 0.1, 10.0);
                self.quad_coeffs(e, &x)
            })
            .collect()
    }

    /// Samples the reduction condition `h01 h10 <= h00 h11` for edge `e`.
    pub fn bistable_condition_sample(&self, e: EdgeId, n_samples: usize, seed: u64) -> Result<BistableReport> {
        let samples = self.sample_quad_coeffs(e, n_samples, seed)?;
        let passed = samples.iter().filter(|c| c.satisfies_reduction_condition(REDUCTION_SLACK)).count();
        let worst_ratio = samples.iter().map(QuadCoeffs::violation_ratio).fold(0.0, f64::max);
        Ok(BistableReport { edge: e, samples: samples.len(), passed, worst_ratio })
    }
}

/// Relative slack used when testing `h01 h10 <= h00 h11`; covers rounding on
/// exactly factorised (normal-edge) coefficients.
pub const REDUCTION_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BistableReport {
    pub edge: EdgeId,
    pub samples: usize,
    pub passed: usize,
    /// Largest `h01 h10 / (h00 h11)` observed.
    pub worst_ratio: f64,
}

impl BistableReport {
    pub fn all_pass(&self) -> bool {
        self.passed == self.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multigraph::MultiGraph;

    fn pair() -> MultiGM {
        let g = MultiGraph::from_edges(2, &[(0, 1)]).unwrap();
        MultiGM::from_fn(g, |n, _| if n.0 == 0 { vec![1.0, 2.0] } else { vec![3.0, 4.0] }).unwrap()
    }

    fn bouquet() -> MultiGM {
        let g = MultiGraph::from_edges(1, &[(0, 0)]).unwrap();
        MultiGM::from_fn(g, |_, _| vec![2.0, 5.0, 5.0, 3.0]).unwrap()
    }

    #[test]
    fn node_poly_from_tables() {
        let h = FactoredGaugePoly::from_model(&pair()).unwrap();
        let p = h.factor(NodeId(0)).unwrap();
        assert_eq!(p.coeffs(), &BTreeMap::from([(0, 1.0), (1, 2.0)]));
        let b = FactoredGaugePoly::from_model(&bouquet()).unwrap();
        let q = b.factor(NodeId(0)).unwrap();
        assert_eq!(q.coeffs(), &BTreeMap::from([(0, 2.0), (1, 5.0), (2, 5.0), (3, 3.0)]));
        let m = bouquet();
        let one = GaugeVector::uniform(m.graph(), 1.0).unwrap();
        assert_eq!(q.eval(&one).unwrap(), 15.0);
    }

    #[test]
    fn quad_coeffs_examples() {
        let m = pair();
        let h = FactoredGaugePoly::from_model(&m).unwrap();
        let x = GaugeVector::uniform(m.graph(), 1.0).unwrap();
        let c = h.quad_coeffs(EdgeId(0), &x).unwrap();
        assert_eq!(c, QuadCoeffs::new(3.0, 6.0, 4.0, 8.0));
        assert_eq!(c.h00 * c.h11, c.h10 * c.h01);
        let b = bouquet();
        let hb = FactoredGaugePoly::from_model(&b).unwrap();
        let xb = GaugeVector::uniform(b.graph(), 1.0).unwrap();
        assert_eq!(hb.quad_coeffs(EdgeId(0), &xb).unwrap(), QuadCoeffs::new(2.0, 5.0, 5.0, 3.0));
        assert!(hb.quad_coeffs(EdgeId(4), &xb).is_err());
    }

    #[test]
    fn contraction_examples() {
        let h = FactoredGaugePoly::from_model(&pair()).unwrap();
        assert_eq!(h.contract_all(&[EdgeId(0)]).unwrap(), 11.0);
        let b = FactoredGaugePoly::from_model(&bouquet()).unwrap();
        assert_eq!(b.contract_all(&[EdgeId(0)]).unwrap(), 5.0);
        assert!(matches!(b.exact_contract(EdgeId(2)), Err(Error::UnknownEdge(_))));
    }

    #[test]
    fn kronecker_rule() {
        let (p, q) = (DirectedEdge::plus(EdgeId(0)), DirectedEdge::minus(EdgeId(0)));
        let xy = NodePoly::new(NodeId(0), vec![p, q], BTreeMap::from([(3, 1.0)])).unwrap();
        assert_eq!(xy.mixed_derivative_at_zero(p, q).unwrap().coeff(0), 1.0);
        let x = NodePoly::new(NodeId(0), vec![p, q], BTreeMap::from([(1, 1.0)])).unwrap();
        assert_eq!(x.mixed_derivative_at_zero(p, q).unwrap().num_terms(), 0);
        let one = NodePoly::new(NodeId(0), vec![p, q], BTreeMap::from([(0, 1.0)])).unwrap();
        assert_eq!(one.mixed_derivative_at_zero(p, q).unwrap().coeff(0), 1.0);
    }

    #[test]
    fn bistable_samples() {
        let h = FactoredGaugePoly::from_model(&pair()).unwrap();
        assert!(h.bistable_condition_sample(EdgeId(0), 50, 3).unwrap().all_pass());
        let b = FactoredGaugePoly::from_model(&bouquet()).unwrap();
        let r = b.bistable_condition_sample(EdgeId(0), 50, 3).unwrap();
        assert_eq!(r.passed, 0);
        assert!((r.worst_ratio - 25.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn remove_bits_compacts() {
        assert_eq!(remove_bits(0b1011, &[1]), 0b101);
        assert_eq!(remove_bits(0b1111, &[0, 3]), 0b11);
    }

    #[test]
    fn poly_cap_enforced() {
        let vars = (0..21).map(|i| DirectedEdge::plus(EdgeId(i))).collect();
        assert!(matches!(
            NodePoly::new(NodeId(0), vars, BTreeMap::new()),
            Err(Error::TooManyVariables { vars: 21, .. })
        ));
    }
}
