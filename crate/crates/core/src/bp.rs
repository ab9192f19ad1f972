//! BP gauges: stationary points of the Gauge Function.
//!
//! The solver sweeps over edges in id order and replaces each sibling pair
//! by the closed-form stationary pair of `h / (1 + x+ x-)` with every other
//! variable held fixed. Values, beliefs, the Bethe free energy and the
//! max-min Lagrangian are all evaluated from the resulting gauge.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauge::{monomial_weights, GaugeVector};
use crate::model::MultiGM;
use crate::multigraph::{DirectedEdge, EdgeId, NodeId, Polarity};
use crate::poly::{FactoredGaugePoly, QuadCoeffs};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Weight kept on the previous value in each pair update, in `[0, 1)`.
    pub damping: f64,
    /// Converged when the largest absolute residual is at most this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Relative softening applied to hard models before solving.
    pub soften: f64,
    /// Restart points are drawn log-uniformly from `[init_lo, init_hi]`.
    pub init_lo: f64,
    pub init_hi: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_sweeps: 10_000,
            restarts: 16,
            seed: 0,
            soften: 1e-12,
            init_lo: 0.25,
            init_hi: 4.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_sweeps == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig("max_sweeps and restarts must be at least 1".into()));
        }
        if self.soften.is_nan() || self.soften <= 0.0 {
            return Err(Error::InvalidSoftening(self.soften));
        }
        if !(self.init_lo > 0.0 && self.init_lo <= self.init_hi && self.init_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad init range [{}, {}]", self.init_lo, self.init_hi)));
        }
        Ok(())
    }
}

/// Stationary pair `(x+, x-)` of `(h00 + h10 x+ + h01 x- + h11 x+ x-) / (1 + x+ x-)`.
pub fn edge_pair_update(c: &QuadCoeffs) -> Result<(f64, f64)> {
    if !(c.h10 > 0.0 && c.h01 > 0.0) {
        return Err(Error::DegenerateEdge { h10: c.h10, h01: c.h01 });
    }
    let diff = c.h11 - c.h00;
    let root = (diff * diff + 4.0 * c.h01 * c.h10).sqrt();
    // diff + root, rationalised when diff < 0 to avoid cancellation
    let num = if diff >= 0.0 { diff + root } else { 4.0 * c.h01 * c.h10 / (root - diff) };
    Ok((num / (2.0 * c.h10), num / (2.0 * c.h01)))
}

/// Value of `h / (1 + x+ x-)` at the stationary pair.
pub fn bp_value(c: &QuadCoeffs) -> Result<f64> {
    if !(c.h10 > 0.0 && c.h01 > 0.0) {
        return Err(Error::DegenerateEdge { h10: c.h10, h01: c.h01 });
    }
    let diff = c.h11 - c.h00;
    Ok((c.h11 + c.h00 + (diff * diff + 4.0 * c.h01 * c.h10).sqrt()) / 2.0)
}

/// Dense per-node view of a model used by the solver and the local evaluations.
struct Local {
    edges: Vec<EdgeId>,
    nodes: Vec<NodeId>,
    tables: Vec<Vec<f64>>,
    /// Per node, per incidence position: index into the flat gauge values.
    slots: Vec<Vec<usize>>,
    /// Per edge: `(node index, position)` of the `+` and `-` slots.
    edge_slots: Vec<[(usize, usize); 2]>,
}

impl Local {
    fn new(m: &MultiGM) -> Self {
        let g = m.graph();
        let edges: Vec<EdgeId> = g.edge_ids().collect();
        let nodes: Vec<NodeId> = g.node_ids().collect();
        let mut tables = Vec::with_capacity(nodes.len());
        let mut slots = Vec::with_capacity(nodes.len());
        let mut edge_slots = vec![[(0, 0); 2]; edges.len()];
        for (ni, &n) in nodes.iter().enumerate() {
            let f = m.factor(n).expect("factor per node");
            tables.push(f.values().to_vec());
            let mut s = Vec::with_capacity(f.arity());
            for (pos, d) in f.vars().iter().enumerate() {
                let ei = edges.binary_search(&d.edge).expect("edge in graph");
                let pol = usize::from(d.polarity == Polarity::Minus);
                s.push(2 * ei + pol);
                edge_slots[ei][pol] = (ni, pos);
            }
            slots.push(s);
        }
        Self { edges, nodes, tables, slots, edge_slots }
    }

    fn node_xs(&self, ni: usize, x: &[f64]) -> Vec<f64> {
        self.slots[ni].iter().map(|&s| x[s]).collect()
    }

    /// Sums of `f(ς) x^ς` grouped by the bits at `fixed`, with fixed variables set to one.
    fn grouped(&self, ni: usize, x: &[f64], fixed: &[usize]) -> Vec<f64> {
        let mut xs = self.node_xs(ni, x);
        for &p in fixed {
            xs[p] = 1.0;
        }
        let w = monomial_weights(&xs);
        let mut out = vec![0.0; 1 << fixed.len()];
        for (s, (&f, &wv)) in self.tables[ni].iter().zip(&w).enumerate() {
            let key = fixed.iter().enumerate().fold(0usize, |k, (i, &p)| k | (s >> p & 1) << i);
            out[key] += f * wv;
        }
        out
    }

    /// Coefficients of edge `ei` up to the positive factor contributed by the other nodes.
    fn quad(&self, ei: usize, x: &[f64]) -> QuadCoeffs {
        let [(na, pa), (nb, pb)] = self.edge_slots[ei];
        if na == nb {
            let g = self.grouped(na, x, &[pa, pb]);
            QuadCoeffs::new(g[0], g[1], g[2], g[3])
        } else {
            let a = self.grouped(na, x, &[pa]);
            let b = self.grouped(nb, x, &[pb]);
            QuadCoeffs::new(a[0] * b[0], a[1] * b[0], a[0] * b[1], a[1] * b[1])
        }
    }

    /// `(h_a, distribution b_a)` at the node.
    fn node_belief(&self, ni: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let w = monomial_weights(&self.node_xs(ni, x));
        let mut b: Vec<f64> = self.tables[ni].iter().zip(&w).map(|(f, w)| f * w).collect();
        let h: f64 = b.iter().sum();
        for v in &mut b {
            *v /= h;
        }
        (h, b)
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for ni in 0..self.nodes.len() {
            let (_, b) = self.node_belief(ni, x);
            for (pos, &s) in self.slots[ni].iter().enumerate() {
                let e = s / 2;
                let prod = x[2 * e] * x[2 * e + 1];
                let beta = prod / (1.0 + prod);
                let marg: f64 = b.iter().enumerate().filter(|(i, _)| i >> pos & 1 == 1).map(|(_, v)| v).sum();
                out.push(beta - marg);
            }
        }
        out
    }

    /// Residuals and their Jacobian with respect to `log x`, rows in residual order.
    fn jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut r = Vec::with_capacity(n);
        let mut jac = DMatrix::zeros(n, n);
        for ni in 0..self.nodes.len() {
            let (_, b) = self.node_belief(ni, x);
            let slots = &self.slots[ni];
            let k = slots.len();
            let mut m1 = vec![0.0; k];
            let mut m2 = vec![0.0; k * k];
            for (s, &p) in b.iter().enumerate() {
                for i in 0..k {
                    if s >> i & 1 == 1 {
                        m1[i] += p;
                        for j in 0..k {
                            if s >> j & 1 == 1 {
                                m2[i * k + j] += p;
                            }
                        }
                    }
                }
            }
            for i in 0..k {
                let row = r.len();
                let e = slots[i] / 2;
                let prod = x[2 * e] * x[2 * e + 1];
                let beta = prod / (1.0 + prod);
                r.push(beta - m1[i]);
                let db = beta * (1.0 - beta);
                jac[(row, 2 * e)] += db;
                jac[(row, 2 * e + 1)] += db;
                for j in 0..k {
                    jac[(row, slots[j])] -= m2[i * k + j] - m1[i] * m1[j];
                }
            }
        }
        (r, jac)
    }

    /// Newton iterations in `log x` from `x`; `None` unless the tolerance is reached.
    fn newton_polish(&self, x: &[f64], tol: f64, iters: usize) -> Option<(Vec<f64>, f64)> {
        let mut u: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let exp = |u: &[f64]| u.iter().map(|v| v.exp()).collect::<Vec<_>>();
        let mut cur = self.max_residual(x);
        for _ in 0..iters {
            let (r, jac) = self.jacobian(&exp(&u));
            let step = jac.lu().solve(&DVector::from_vec(r))?;
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, d)| a - t * d.clamp(-5.0, 5.0)).collect();
                let res = self.max_residual(&exp(&trial));
                if res < cur {
                    u = trial;
                    cur = res;
                    break;
                }
                t *= 0.5;
                if t < 1.0 / 64.0 {
                    return None;
                }
            }
            if cur <= tol {
                return Some((exp(&u), cur));
            }
        }
        None
    }

    /// A few full Newton steps from a converged point, kept only while they help.
    fn refine(&self, x: Vec<f64>, residual: f64) -> (Vec<f64>, f64) {
        let (mut x, mut cur) = (x, residual);
        for _ in 0..3 {
            let (r, jac) = self.jacobian(&x);
            let Some(step) = jac.lu().solve(&DVector::from_vec(r)) else { break };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(v, d)| v * (-d.clamp(-0.5, 0.5)).exp()).collect();
            let res = self.max_residual(&trial);
            if res.is_nan() || res >= 0.5 * cur {
                break;
            }
            x = trial;
            cur = res;
        }
        (x, cur)
    }

    fn max_residual(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().fold(0.0, |m, r| if r.is_nan() { f64::NAN } else { m.max(r.abs()) })
    }

    fn log_z(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ni in 0..self.nodes.len() {
            acc += self.tables[ni].iter().zip(monomial_weights(&self.node_xs(ni, x))).map(|(f, w)| f * w).sum::<f64>().ln();
        }
        for e in 0..self.edges.len() {
            acc -= (x[2 * e] * x[2 * e + 1]).ln_1p();
        }
        acc
    }
}

fn require_soft(m: &MultiGM) -> Result<()> {
    if m.is_soft() {
        Ok(())
    } else {
        Err(Error::NotSoft)
    }
}

/// Normalised stationarity residuals `β_α - b_a(ς_{α_d} = 1)`, one per
/// (node, incident directed edge) in node order then incidence order.
pub fn bp_residual(m: &MultiGM, x: &GaugeVector) -> Result<Vec<f64>> {
    require_soft(m)?;
    check_gauge(m, x)?;
    Ok(Local::new(m).residuals(x.values()))
}

/// Labels matching the entries of [`bp_residual`].
pub fn residual_labels(m: &MultiGM) -> Vec<(NodeId, DirectedEdge)> {
    let g = m.graph();
    g.node_ids().flat_map(|n| g.incidence(n).unwrap().iter().map(move |&d| (n, d))).collect()
}

pub fn max_abs_residual(m: &MultiGM, x: &GaugeVector) -> Result<f64> {
    require_soft(m)?;
    check_gauge(m, x)?;
    Ok(Local::new(m).max_residual(x.values()))
}

fn check_gauge(m: &MultiGM, x: &GaugeVector) -> Result<()> {
    let edges: Vec<EdgeId> = m.graph().edge_ids().collect();
    if x.edges() != edges.as_slice() {
        return Err(Error::SizeMismatch { expected: 2 * edges.len(), got: x.values().len() });
    }
    Ok(())
}

/// Quadratic coefficients of edge `e` at `x`, up to a positive factor shared by all four.
pub fn edge_quad_coeffs(m: &MultiGM, x: &GaugeVector, e: EdgeId) -> Result<QuadCoeffs> {
    check_gauge(m, x)?;
    let local = Local::new(m);
    let ei = local.edges.binary_search(&e).map_err(|_| Error::UnknownEdge(e))?;
    Ok(local.quad(ei, x.values()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BPGauge {
    pub x: GaugeVector,
    /// Largest absolute residual at `x`.
    pub residual: f64,
    pub z: f64,
    pub log_z: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub restart: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub restart: usize,
    pub converged: bool,
    pub sweeps: usize,
    pub residual: f64,
    pub log_z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BpSolution {
    /// Converged gauge with the largest `z`.
    pub best: BPGauge,
    pub runs: Vec<RunSummary>,
    /// Distinct converged values of `z`, largest first.
    pub stationary_values: Vec<f64>,
    pub softened: bool,
    /// The model actually solved (softened if the input was hard).
    pub model: MultiGM,
}

/// Sweeps between attempts to finish a slowly converging run with Newton steps.
const POLISH_EVERY: usize = 50;
/// Newton finishing is only attempted once the residual is below this.
const POLISH_BELOW: f64 = 1e-3;

fn run_from(local: &Local, mut x: Vec<f64>, cfg: &SolverConfig) -> Result<(Vec<f64>, usize, f64, bool)> {
    let d = cfg.damping;
    let mut residual = local.max_residual(&x);
    if residual <= cfg.tol {
        let (x, residual) = local.refine(x, residual);
        return Ok((x, 0, residual, true));
    }
    for sweep in 1..=cfg.max_sweeps {
        for ei in 0..local.edges.len() {
            let (p, q) = edge_pair_update(&local.quad(ei, &x))?;
            x[2 * ei] = d * x[2 * ei] + (1.0 - d) * p;
            x[2 * ei + 1] = d * x[2 * ei + 1] + (1.0 - d) * q;
        }
        residual = local.max_residual(&x);
        if residual <= cfg.tol {
            let (x, residual) = local.refine(x, residual);
            return Ok((x, sweep, residual, true));
        }
        if !residual.is_finite() || x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Ok((x, sweep, f64::INFINITY, false));
        }
        // slow linear convergence near the boundary: try to finish with Newton
        if sweep % POLISH_EVERY == 0 && residual < POLISH_BELOW {
            if let Some((xp, rp)) = local.newton_polish(&x, cfg.tol, 30) {
                let (xp, rp) = local.refine(xp, rp);
                return Ok((xp, sweep, rp, true));
            }
        }
    }
    Ok((x, cfg.max_sweeps, residual, false))
}

/// Damped Gauss-Seidel search for BP gauges from `cfg.restarts` random starts.
/// Hard models are softened with `cfg.soften` first.
pub fn solve_bp(m: &MultiGM, cfg: &SolverConfig) -> Result<BpSolution> {
    cfg.validate()?;
    let softened = !m.is_soft();
    let model = if softened { m.soften(cfg.soften)? } else { m.clone() };
    let local = Local::new(&model);
    let g = model.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut runs = Vec::with_capacity(cfg.restarts);
    let mut best: Option<BPGauge> = None;
    let mut best_residual = f64::INFINITY;
    let mut values: Vec<f64> = Vec::new();
    for restart in 0..cfg.restarts {
        let x0 = GaugeVector::random_log_uniform(g, &mut rng, cfg.init_lo, cfg.init_hi);
        let (x, sweeps, residual, converged) = run_from(&local, x0.values().to_vec(), cfg)?;
        let log_z = if converged { local.log_z(&x) } else { f64::NAN };
        runs.push(RunSummary { restart, converged, sweeps, residual, log_z });
        best_residual = best_residual.min(residual);
        if !converged {
            continue;
        }
        if !values.iter().any(|&v| ((v - log_z).exp_m1()).abs() <= 1e-8) {
            values.push(log_z);
        }
        if best.as_ref().is_none_or(|b| log_z > b.log_z) {
            best = Some(BPGauge {
                x: GaugeVector::new(g, x)?,
                residual,
                z: log_z.exp(),
                log_z,
                sweeps,
                converged,
                restart,
            });
        }
    }
    let best = best.ok_or(Error::NotConverged { restarts: cfg.restarts, best_residual })?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(BpSolution { best, runs, stationary_values: values.into_iter().map(f64::exp).collect(), softened, model })
}

/// Node beliefs `b_a` and edge marginals `β_α`.
#[derive(Clone, Debug, PartialEq)]
pub struct Beliefs {
    pub node: BTreeMap<NodeId, Vec<f64>>,
    pub edge: BTreeMap<EdgeId, f64>,
}

impl Beliefs {
    /// Largest violation of normalisation and edge consistency.
    pub fn polytope_violation(&self, m: &MultiGM) -> Result<f64> {
        let g = m.graph();
        let mut worst: f64 = 0.0;
        for n in g.node_ids() {
            let b = self.node.get(&n).ok_or(Error::UnknownNode(n))?;
            let vars = g.incidence(n)?;
            if b.len() != 1 << vars.len() {
                return Err(Error::SizeMismatch { expected: 1 << vars.len(), got: b.len() });
            }
            if let Some(neg) = b.iter().find(|v| **v < 0.0 || !v.is_finite()) {
                worst = worst.max(neg.abs().max(f64::MIN_POSITIVE));
            }
            worst = worst.max((b.iter().sum::<f64>() - 1.0).abs());
            for (pos, d) in vars.iter().enumerate() {
                let beta = *self.edge.get(&d.edge).ok_or(Error::UnknownEdge(d.edge))?;
                let marg: f64 = b.iter().enumerate().filter(|(i, _)| i >> pos & 1 == 1).map(|(_, v)| v).sum();
                worst = worst.max((marg - beta).abs());
            }
        }
        for (&e, &beta) in &self.edge {
            if !g.contains_edge(e) {
                return Err(Error::UnknownEdge(e));
            }
            if !(0.0..=1.0).contains(&beta) {
                worst = worst.max(if beta < 0.0 { -beta } else { beta - 1.0 });
            }
        }
        Ok(worst)
    }

    /// `min_α min(β_α, 1 - β_α)`: distance of the edge marginals from the boundary.
    pub fn interior_margin(&self) -> f64 {
        self.edge.values().map(|&b| b.min(1.0 - b)).fold(0.5, f64::min)
    }
}

/// `b_a(ς) ∝ f_a(ς) ∏ x^ς` and `β_α = x+ x- / (1 + x+ x-)`.
pub fn marginals_from_gauge(m: &MultiGM, x: &GaugeVector) -> Result<Beliefs> {
    check_gauge(m, x)?;
    let local = Local::new(m);
    let node = local.nodes.iter().enumerate().map(|(ni, &n)| (n, local.node_belief(ni, x.values()).1)).collect();
    let edge = local.edges.iter().map(|&e| Ok((e, x.edge_beta(e)?))).collect::<Result<_>>()?;
    Ok(Beliefs { node, edge })
}

fn xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

/// Tolerance on polytope membership accepted by [`bethe_free_energy`].
pub const POLYTOPE_TOL: f64 = 1e-9;

/// `F = Σ_a Σ b log(b / f) - Σ_α [β log β + (1-β) log(1-β)]`, with `0 log 0 = 0`.
pub fn bethe_free_energy(m: &MultiGM, bel: &Beliefs) -> Result<f64> {
    require_soft(m)?;
    let v = bel.polytope_violation(m)?;
    if v > POLYTOPE_TOL {
        return Err(Error::BeliefOutsidePolytope(v));
    }
    let mut f = 0.0;
    for t in m.factors() {
        for (&b, &fv) in bel.node[&t.node()].iter().zip(t.values()) {
            if b > 0.0 {
                f += b * (b.ln() - fv.ln());
            }
        }
    }
    for &beta in bel.edge.values() {
        f -= xlogx(beta) + xlogx(1.0 - beta);
    }
    Ok(f)
}

/// `log L(β, x)`; `beta` is aligned with ascending edge ids.
pub fn log_lagrangian(m: &MultiGM, beta: &[f64], x: &GaugeVector) -> Result<f64> {
    check_gauge(m, x)?;
    let g = m.graph();
    if beta.len() != g.num_edges() {
        return Err(Error::SizeMismatch { expected: g.num_edges(), got: beta.len() });
    }
    if let Some(b) = beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::InvalidConfig(format!("edge marginal {b} outside [0, 1]")));
    }
    let local = Local::new(m);
    let xv = x.values();
    let mut acc = 0.0;
    for (i, &b) in beta.iter().enumerate() {
        acc += xlogx(b) + xlogx(1.0 - b);
        acc -= b * (xv[2 * i].ln() + xv[2 * i + 1].ln());
    }
    for ni in 0..local.nodes.len() {
        let h: f64 = local.tables[ni].iter().zip(monomial_weights(&local.node_xs(ni, xv))).map(|(f, w)| f * w).sum();
        acc += h.ln();
    }
    Ok(acc)
}

/// The max-min Lagrangian `L(β, x)`.
pub fn lagrangian_l(m: &MultiGM, beta: &[f64], x: &GaugeVector) -> Result<f64> {
    Ok(log_lagrangian(m, beta, x)?.exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleReport {
    pub edge: EdgeId,
    /// Finite-difference Hessian of `h / (1 + x+ x-)` in `(x+, x-)`, normalised by its value.
    pub hessian: [[f64; 2]; 2],
    pub det: f64,
    pub mixed: f64,
}

impl SaddleReport {
    pub fn is_saddle(&self) -> bool {
        self.det < 0.0
    }
}

/// Relative finite-difference step used by [`saddle_check`].
pub const SADDLE_STEP: f64 = 1e-5;

pub fn saddle_check(m: &MultiGM, x: &GaugeVector, e: EdgeId) -> Result<SaddleReport> {
    let c = edge_quad_coeffs(m, x, e)?;
    let (p0, q0) = x.pair(e)?;
    Ok(saddle_of_coeffs(e, &c, p0, q0))
}

pub(crate) fn saddle_of_coeffs(e: EdgeId, c: &QuadCoeffs, p0: f64, q0: f64) -> SaddleReport {
    let phi = |p: f64, q: f64| (c.h00 + c.h10 * p + c.h01 * q + c.h11 * p * q) / (1.0 + p * q);
    let scale = phi(p0, q0);
    let f = |p: f64, q: f64| phi(p, q) / scale;
    let (sp, sq) = (SADDLE_STEP * p0, SADDLE_STEP * q0);
    let f0 = f(p0, q0);
    let fpp = (f(p0 + sp, q0) - 2.0 * f0 + f(p0 - sp, q0)) / (sp * sp);
    let fqq = (f(p0, q0 + sq) - 2.0 * f0 + f(p0, q0 - sq)) / (sq * sq);
    let fpq = (f(p0 + sp, q0 + sq) - f(p0 + sp, q0 - sq) - f(p0 - sp, q0 + sq) + f(p0 - sp, q0 - sq)) / (4.0 * sp * sq);
    SaddleReport { edge: e, hessian: [[fpp, fpq], [fpq, fqq]], det: fpp * fqq - fpq * fpq, mixed: fpq }
}

/// One stage of a BP contraction sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceStage {
    pub m: usize,
    /// Edge eliminated to reach this stage (none for the original model).
    pub eliminated: Option<EdgeId>,
    pub edges_left: usize,
    /// `Z^(m; vbp)`, absent when the solver failed at this stage.
    pub z_vbp: Option<f64>,
    pub converged: bool,
    pub residual: f64,
    pub model: MultiGM,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractSequence {
    pub stages: Vec<SequenceStage>,
    /// Value of the fully contracted model.
    pub z_final: f64,
    /// `(m, relative drop)` for every step with `Z^(m) < Z^(m-1) (1 - slack)`.
    pub decreases: Vec<(usize, f64)>,
    pub softened: bool,
}

impl ContractSequence {
    pub fn is_monotone(&self) -> bool {
        self.decreases.is_empty()
    }

    pub fn all_converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }

    /// `Z^(0; vbp) <= Z_final (1 + slack)`.
    pub fn lower_bound_holds(&self, slack: f64) -> bool {
        self.stages[0].z_vbp.is_some_and(|z| z <= self.z_final * (1.0 + slack))
    }
}

/// Per-step relative slack used when flagging decreases.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Solves BP on every model along the exact contraction sequence defined by `order`.
pub fn bp_contract_sequence(m: &MultiGM, order: &[EdgeId], cfg: &SolverConfig) -> Result<ContractSequence> {
    cfg.validate()?;
    m.graph().validate_order(order)?;
    let softened = !m.is_soft();
    let mut model = if softened { m.soften(cfg.soften)? } else { m.clone() };
    let mut stages = Vec::with_capacity(order.len() + 1);
    for step in 0..=order.len() {
        if step > 0 {
            model = model.contract_model(order[step - 1])?;
        }
        let (z, converged, residual) = if model.num_edges() == 0 {
            (Some(model.edgeless_value()), true, 0.0)
        } else {
            match solve_bp(&model, cfg) {
                Ok(sol) => (Some(sol.best.z), true, sol.best.residual),
                Err(Error::NotConverged { best_residual, .. }) => (None, false, best_residual),
                Err(e) => return Err(e),
            }
        };
        stages.push(SequenceStage {
            m: step,
            eliminated: step.checked_sub(1).map(|i| order[i]),
            edges_left: model.num_edges(),
            z_vbp: z,
            converged,
            residual,
            model: model.clone(),
        });
    }
    let z_final = model.edgeless_value();
    let mut decreases = Vec::new();
    for w in stages.windows(2) {
        if let (Some(a), Some(b)) = (w[0].z_vbp, w[1].z_vbp) {
            if b < a * (1.0 - MONOTONE_SLACK) {
                decreases.push((w[1].m, (a - b) / a));
            }
        }
    }
    Ok(ContractSequence { stages, z_final, decreases, softened })
}

/// BP elimination of a normal edge: `A0 B0 + A1 B1` where `A`, `B` are the
/// two node polynomials split on the edge's slots.
pub fn bp_normal_contract(h: &FactoredGaugePoly, e: EdgeId) -> Result<FactoredGaugePoly> {
    if !h.is_normal(e)? {
        return Err(Error::SelfEdge(e));
    }
    let (s, o) = h.endpoints(e)?;
    let ds = if s.position(DirectedEdge::plus(e)).is_some() { DirectedEdge::plus(e) } else { DirectedEdge::minus(e) };
    let (a0, a1) = s.split(ds)?;
    let (b0, b1) = o.split(ds.reversed())?;
    let merged = a0.product(&b0, s.node())?.add(&a1.product(&b1, s.node())?)?;
    Ok(h.with_merged(e, merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{gauge_function, log_gauge_function};
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
    fn pair_update_examples() {
        let (p, q) = edge_pair_update(&QuadCoeffs::new(1.0, 2.0, 3.0, 6.0)).unwrap();
        assert!((p - 3.0).abs() < 1e-14 && (q - 2.0).abs() < 1e-14);
        assert!((bp_value(&QuadCoeffs::new(1.0, 2.0, 3.0, 6.0)).unwrap() - 7.0).abs() < 1e-14);
        let (p, q) = edge_pair_update(&QuadCoeffs::new(1.0, 2.0, 2.0, 2.0)).unwrap();
        let want = (1.0 + 17f64.sqrt()) / 4.0;
        assert!((p - want).abs() < 1e-14 && (q - want).abs() < 1e-14);
        let v = bp_value(&QuadCoeffs::new(1.0, 2.0, 2.0, 2.0)).unwrap();
        assert!((v - (3.0 + 17f64.sqrt()) / 2.0).abs() < 1e-14 && v > 3.0);
        let v = bp_value(&QuadCoeffs::new(2.0, 5.0, 5.0, 3.0)).unwrap();
        assert!((v - (5.0 + 101f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!(matches!(edge_pair_update(&QuadCoeffs::new(1.0, 0.0, 0.0, 1.0)), Err(Error::DegenerateEdge { .. })));
        let (p, q) = edge_pair_update(&QuadCoeffs::new(1.0, 1e-12, 1e-12, 1.0)).unwrap();
        assert!((p - 1.0).abs() < 1e-6 && (q - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cancellation_safe_root() {
        let c = QuadCoeffs::new(1e8, 1.0, 1.0, 1e-8);
        let (p, q) = edge_pair_update(&c).unwrap();
        let phi = |p: f64, q: f64| (c.h00 + c.h10 * p + c.h01 * q + c.h11 * p * q) / (1.0 + p * q);
        assert!(p > 0.0 && q > 0.0);
        assert!((phi(p, q) - bp_value(&c).unwrap()).abs() <= 1e-12 * bp_value(&c).unwrap());
    }

    #[test]
    fn pair_residual_vanishes_at_bp_pair() {
        let m = pair();
        let x = GaugeVector::new(m.graph(), vec![4.0 / 3.0, 2.0]).unwrap();
        assert!(bp_residual(&m, &x).unwrap().iter().all(|r| r.abs() < 1e-12));
        let y = GaugeVector::new(m.graph(), vec![0.7, 5.0]).unwrap();
        assert!(bp_residual(&m, &y).unwrap().iter().any(|r| r.abs() > 1e-3));
        let mut hard = pair().soften(1.0).unwrap();
        hard = MultiGM::from_fn(hard.graph().clone(), |n, _| if n.0 == 0 { vec![0.0, 1.0] } else { vec![1.0, 1.0] }).unwrap();
        assert!(matches!(bp_residual(&hard, &x), Err(Error::NotSoft)));
    }

    #[test]
    fn residual_matches_log_derivative() {
        let m = bouquet();
        let x = GaugeVector::new(m.graph(), vec![0.8, 1.7]).unwrap();
        let r = bp_residual(&m, &x).unwrap();
        for (i, d) in m.graph().incidence(NodeId(0)).unwrap().iter().enumerate() {
            let h: f64 = 1e-6;
            let mut up = x.clone();
            up.set(*d, x.get(*d).unwrap() * h.exp()).unwrap();
            let mut dn = x.clone();
            dn.set(*d, x.get(*d).unwrap() * (-h).exp()).unwrap();
            let fd = (log_gauge_function(&m, &up).unwrap() - log_gauge_function(&m, &dn).unwrap()) / (2.0 * h);
            assert!((r[i] + fd).abs() < 1e-5, "{} vs {}", r[i], fd);
        }
    }

    #[test]
    fn solve_small_models() {
        let cfg = SolverConfig::default();
        let s = solve_bp(&pair(), &cfg).unwrap();
        assert!((s.best.z - 11.0).abs() < 1e-9);
        let b = solve_bp(&bouquet(), &cfg).unwrap();
        assert!((b.best.z - (5.0 + 101f64.sqrt()) / 2.0).abs() < 1e-9);
        assert_eq!(b.stationary_values.len(), 1);
    }

    #[test]
    fn beliefs_and_free_energy() {
        let m = bouquet();
        let s = solve_bp(&m, &SolverConfig::default()).unwrap();
        let bel = marginals_from_gauge(&m, &s.best.x).unwrap();
        assert!(bel.polytope_violation(&m).unwrap() < 1e-9);
        let f = bethe_free_energy(&m, &bel).unwrap();
        assert!((f + s.best.log_z).abs() < 1e-8);
        let mut bad = bel.clone();
        *bad.edge.get_mut(&EdgeId(0)).unwrap() += 0.1;
        assert!(matches!(bethe_free_energy(&m, &bad), Err(Error::BeliefOutsidePolytope(_))));
        let one = MultiGM::from_fn(MultiGraph::from_edges(2, &[(0, 1)]).unwrap(), |_, _| vec![1.0, 1.0]).unwrap();
        let x = GaugeVector::uniform(one.graph(), 1.0).unwrap();
        assert_eq!(marginals_from_gauge(&one, &x).unwrap().edge[&EdgeId(0)], 0.5);
    }

    #[test]
    fn lagrangian_at_bp_and_gauge_shift() {
        let m = bouquet();
        let s = solve_bp(&m, &SolverConfig::default()).unwrap();
        let beta = vec![s.best.x.edge_beta(EdgeId(0)).unwrap()];
        let l = lagrangian_l(&m, &beta, &s.best.x).unwrap();
        assert!((l - s.best.z).abs() < 1e-8 * s.best.z);
        let z = gauge_function(&m, &s.best.x).unwrap();
        assert!((l - z).abs() < 1e-8 * z);
    }

    #[test]
    fn saddle_examples() {
        let r = saddle_of_coeffs(EdgeId(0), &QuadCoeffs::new(1.0, 2.0, 3.0, 6.0), 3.0, 2.0);
        assert!(r.is_saddle() && r.mixed < 0.0);
        let c = QuadCoeffs::new(2.0, 5.0, 5.0, 3.0);
        let (p, q) = edge_pair_update(&c).unwrap();
        assert!(saddle_of_coeffs(EdgeId(0), &c, p, q).is_saddle());
    }

    #[test]
    fn normal_contract_matches_exact() {
        let h = FactoredGaugePoly::from_model(&pair()).unwrap();
        let a = bp_normal_contract(&h, EdgeId(0)).unwrap();
        assert_eq!(a, h.exact_contract(EdgeId(0)).unwrap());
        assert_eq!(a.contract_all(&[]).unwrap(), 11.0);
        let b = FactoredGaugePoly::from_model(&bouquet()).unwrap();
        assert!(matches!(bp_normal_contract(&b, EdgeId(0)), Err(Error::SelfEdge(_))));
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig { damping: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
