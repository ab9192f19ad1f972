//! Loop series around a BP gauge.
//!
//! At a BP gauge every term of the gauge-transformed series with a node of
//! colored degree exactly one vanishes, so `Z` is the sum over generalized
//! loops. A colored self-edge contributes two to its node's degree.

use crate::bp::max_abs_residual;
use crate::error::{Error, Result};
use crate::gauge::{gauge_function, monomial_weights, GaugeVector};
use crate::model::{Config, MultiGM, ENUMERATION_GUARD};
use crate::multigraph::MultiGraph;

/// Largest residual at which a gauge is accepted as a BP gauge for loop terms.
pub const LOOP_GAUGE_TOL: f64 = 1e-8;

/// All edge subsets with no node of colored degree exactly one, in ascending index order.
pub fn enumerate_generalized_loops(g: &MultiGraph) -> Result<Vec<Config>> {
    enumerate_generalized_loops_with_guard(g, ENUMERATION_GUARD)
}

pub fn enumerate_generalized_loops_with_guard(g: &MultiGraph, guard: usize) -> Result<Vec<Config>> {
    let n = g.num_edges();
    if n > guard {
        return Err(Error::EnumerationGuard { edges: n, guard });
    }
    let nodes: Vec<_> = g.node_ids().collect();
    let idx = |v| nodes.binary_search(&v).unwrap();
    let ends: Vec<(usize, usize)> = g
        .edge_ids()
        .map(|e| {
            let (t, h) = g.endpoints(e).unwrap();
            (idx(t), idx(h))
        })
        .collect();
    // remaining[v]: undecided slots still able to raise v's degree
    let mut remaining = vec![0usize; nodes.len()];
    for &(t, h) in &ends {
        remaining[t] += 1;
        remaining[h] += 1;
    }
    let mut degree = vec![0usize; nodes.len()];
    let mut chosen = vec![false; n];
    let mut out = Vec::new();
    dfs(0, &ends, &mut degree, &mut remaining, &mut chosen, &mut out);
    out.sort_by_key(Config::index);
    Ok(out)
}

fn dfs(
    k: usize,
    ends: &[(usize, usize)],
    degree: &mut [usize],
    remaining: &mut [usize],
    chosen: &mut [bool],
    out: &mut Vec<Config>,
) {
    if k == ends.len() {
        out.push(Config(chosen.to_vec()));
        return;
    }
    let (t, h) = ends[k];
    remaining[t] -= 1;
    remaining[h] -= 1;
    for take in [false, true] {
        if take {
            degree[t] += 1;
            degree[h] += 1;
        }
        chosen[k] = take;
        let dead = |v: usize| degree[v] == 1 && remaining[v] == 0;
        if !dead(t) && !dead(h) {
            dfs(k + 1, ends, degree, remaining, chosen, out);
        }
        if take {
            degree[t] -= 1;
            degree[h] -= 1;
        }
    }
    chosen[k] = false;
    remaining[t] += 1;
    remaining[h] += 1;
}

fn check_bp(m: &MultiGM, x: &GaugeVector) -> Result<()> {
    let r = max_abs_residual(m, x)?;
    if r.is_nan() || r > LOOP_GAUGE_TOL {
        return Err(Error::GaugeNotConverged);
    }
    Ok(())
}

/// `z(σ|x) = z(x) ∏_a μ_a / ∏_{α ∈ σ} β_α (1 - β_α)` at a BP gauge.
pub fn loop_term(m: &MultiGM, x: &GaugeVector, sigma: &Config) -> Result<f64> {
    check_bp(m, x)?;
    loop_term_unchecked(m, x, sigma, gauge_function(m, x)?)
}

fn loop_term_unchecked(m: &MultiGM, x: &GaugeVector, sigma: &Config, z: f64) -> Result<f64> {
    let g = m.graph();
    if sigma.len() != g.num_edges() {
        return Err(Error::SizeMismatch { expected: g.num_edges(), got: sigma.len() });
    }
    let colored: Vec<_> = g.edge_ids().zip(&sigma.0).filter(|(_, &s)| s).map(|(e, _)| e).collect();
    let mut acc = z;
    for &e in &colored {
        let b = x.edge_beta(e)?;
        acc /= b * (1.0 - b);
    }
    for f in m.factors() {
        let vars = f.vars();
        if !vars.iter().any(|d| colored.binary_search(&d.edge).is_ok()) {
            continue;
        }
        let xs = x.local(g, f.node())?;
        let shifts: Vec<Option<f64>> = vars
            .iter()
            .map(|d| colored.binary_search(&d.edge).ok().map(|_| x.edge_beta(d.edge)))
            .map(Option::transpose)
            .collect::<Result<_>>()?;
        let w = monomial_weights(&xs);
        let (mut num, mut den) = (0.0, 0.0);
        for (s, (&fv, &wv)) in f.values().iter().zip(&w).enumerate() {
            let base = fv * wv;
            den += base;
            let mut t = base;
            for (i, sh) in shifts.iter().enumerate() {
                if let Some(b) = sh {
                    t *= (s >> i & 1) as f64 - b;
                }
            }
            num += t;
        }
        acc *= num / den;
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopSeries {
    /// Loops in ascending index order with their terms.
    pub terms: Vec<(Config, f64)>,
    pub sum: f64,
}

/// `Σ_{generalized loops} z(σ|x)` at a BP gauge.
pub fn loop_series_sum(m: &MultiGM, x: &GaugeVector) -> Result<LoopSeries> {
    check_bp(m, x)?;
    let z = gauge_function(m, x)?;
    let loops = enumerate_generalized_loops(m.graph())?;
    let mut terms = Vec::with_capacity(loops.len());
    let mut sum = 0.0;
    for l in loops {
        let t = loop_term_unchecked(m, x, &l, z)?;
        sum += t;
        terms.push((l, t));
    }
    Ok(LoopSeries { terms, sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{solve_bp, SolverConfig};
    use crate::gauge::z_sigma;

    #[test]
    fn loop_counts() {
        let tree = MultiGraph::from_edges(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        assert_eq!(enumerate_generalized_loops(&tree).unwrap(), vec![Config::zeros(3)]);
        let tri = MultiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let l = enumerate_generalized_loops(&tri).unwrap();
        assert_eq!(l, vec![Config::zeros(3), Config(vec![true; 3])]);
        let b = MultiGraph::from_edges(1, &[(0, 0)]).unwrap();
        assert_eq!(enumerate_generalized_loops(&b).unwrap().len(), 2);
    }

    #[test]
    fn bouquet_series() {
        let g = MultiGraph::from_edges(1, &[(0, 0)]).unwrap();
        let m = MultiGM::from_fn(g, |_, _| vec![2.0, 5.0, 5.0, 3.0]).unwrap();
        let s = solve_bp(&m, &SolverConfig::default()).unwrap();
        let ls = loop_series_sum(&m, &s.best.x).unwrap();
        assert_eq!(ls.terms.len(), 2);
        assert!((ls.terms[0].1 - (5.0 + 101f64.sqrt()) / 2.0).abs() < 1e-9);
        assert!(ls.terms[1].1 < 0.0);
        assert!((ls.sum - 5.0).abs() < 1e-9);
        for (c, t) in &ls.terms {
            let want = z_sigma(&m, &s.best.x, c).unwrap();
            assert!((t - want).abs() <= 1e-9 * want.abs());
        }
    }

    #[test]
    fn off_manifold_gauge_rejected() {
        let g = MultiGraph::from_edges(1, &[(0, 0)]).unwrap();
        let m = MultiGM::from_fn(g, |_, _| vec![2.0, 5.0, 5.0, 3.0]).unwrap();
        let x = GaugeVector::uniform(m.graph(), 1.0).unwrap();
        assert!(matches!(loop_series_sum(&m, &x), Err(Error::GaugeNotConverged)));
    }
}
