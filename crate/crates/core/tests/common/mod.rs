//! Independent oracles for the integration and acceptance tests.
//!
//! Nothing here calls the solver or the contraction code; brute force and the
//! direct Bethe minimiser work straight from the factor tables.

#![allow(dead_code)]

use std::collections::BTreeSet;

use gaugepf::{MultiGM, NodeId};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `Σ_σ ∏_a f_a(σ_a)` by plain enumeration.
pub fn brute_force_z(m: &MultiGM) -> f64 {
    let g = m.graph();
    let edges: Vec<_> = g.edge_ids().collect();
    let mut z = 0.0;
    for mask in 0u64..1 << edges.len() {
        let mut w = 1.0;
        for f in m.factors() {
            let mut idx = 0usize;
            for (i, d) in f.vars().iter().enumerate() {
                let pos = edges.iter().position(|&e| e == d.edge).unwrap();
                idx |= ((mask >> pos & 1) as usize) << i;
            }
            w *= f.values()[idx];
        }
        z += w;
    }
    z
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn xlogx(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

/// Slot layout: slot `2i` is `e_i+`, slot `2i+1` is `e_i-`, in ascending edge order.
struct Layout {
    tables: Vec<Vec<f64>>,
    slots: Vec<Vec<usize>>,
    edges: usize,
}

impl Layout {
    fn new(m: &MultiGM) -> Self {
        let g = m.graph();
        let edges: Vec<_> = g.edge_ids().collect();
        let mut tables = Vec::new();
        let mut slots = Vec::new();
        for n in g.node_ids() {
            let f = m.factor(n).unwrap();
            tables.push(f.values().to_vec());
            slots.push(
                f.vars()
                    .iter()
                    .map(|d| {
                        let i = edges.iter().position(|&e| e == d.edge).unwrap();
                        2 * i + usize::from(d.polarity == gaugepf::Polarity::Minus)
                    })
                    .collect(),
            );
        }
        Layout { tables, slots, edges: edges.len() }
    }

    /// `g(u) = Σ_a log h_a(e^u) - Σ_slots β u`, its gradient and Hessian.
    fn inner(&self, beta: &[f64], u: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = 2 * self.edges;
        let mut val = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for (t, sl) in self.tables.iter().zip(&self.slots) {
            let k = sl.len();
            let logw: Vec<f64> = (0..t.len())
                .map(|s| t[s].ln() + (0..k).filter(|i| s >> i & 1 == 1).map(|i| u[sl[i]]).sum::<f64>())
                .collect();
            let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
            let tot: f64 = w.iter().sum();
            val += mx + tot.ln();
            let p: Vec<f64> = w.iter().map(|v| v / tot).collect();
            let mean: Vec<f64> = (0..k).map(|i| p.iter().enumerate().filter(|(s, _)| s >> i & 1 == 1).map(|(_, v)| v).sum()).collect();
            for i in 0..k {
                grad[sl[i]] += mean[i];
                for j in 0..k {
                    let both: f64 = p.iter().enumerate().filter(|(s, _)| s >> i & 1 == 1 && s >> j & 1 == 1).map(|(_, v)| v).sum();
                    hess[(sl[i], sl[j])] += both - mean[i] * mean[j];
                }
            }
        }
        for (e, &b) in beta.iter().enumerate().take(self.edges) {
            for s in [2 * e, 2 * e + 1] {
                val -= b * u[s];
                grad[s] -= b;
            }
        }
        (val, grad, hess)
    }

    /// `min_u g(u)` by damped Newton; the objective is convex.
    /// Starts from `warm` and leaves the minimiser there.
    fn inner_min(&self, beta: &[f64], warm: &mut Vec<f64>) -> f64 {
        let n = 2 * self.edges;
        let mut u = warm.clone();
        let (mut val, mut grad, mut hess) = self.inner(beta, &u);
        for _ in 0..100 {
            if grad.amax() < 1e-11 {
                break;
            }
            let reg = hess.clone() + DMatrix::identity(n, n) * 1e-12;
            let step = reg.lu().solve(&grad).unwrap_or_else(|| grad.clone());
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-10 {
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, d)| a - t * d).collect();
                let (v, gr, h) = self.inner(beta, &trial);
                if v <= val - 1e-4 * t * grad.dot(&step).max(0.0) || v < val {
                    u = trial;
                    val = v;
                    grad = gr;
                    hess = h;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        *warm = u;
        val
    }

    fn phi(&self, beta: &[f64], warm: &mut Vec<f64>) -> f64 {
        beta.iter().map(|&b| xlogx(b) + xlogx(1.0 - b)).sum::<f64>() + self.inner_min(beta, warm)
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `max_β min_x log L(β, x)` by coordinate golden-section ascent over the
/// edge marginals (in logit coordinates), with an exact convex inner
/// minimisation. Returns the best value over several starts.
pub fn direct_bethe_log_z(m: &MultiGM, rng: &mut impl Rng) -> f64 {
    let lay = Layout::new(m);
    let e = lay.edges;
    let mut best = f64::NEG_INFINITY;
    let mut starts = vec![vec![0.0; e]];
    for _ in 0..2 {
        starts.push((0..e).map(|_| rng.gen_range(-3.0..3.0)).collect());
    }
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    for start in starts {
        let mut t = start;
        let warm = std::cell::RefCell::new(vec![0.0; 2 * e]);
        let eval = |t: &[f64]| lay.phi(&t.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>(), &mut warm.borrow_mut());
        let mut cur = eval(&t);
        for _ in 0..200 {
            let before = cur;
            for i in 0..e {
                let (mut a, mut b) = (t[i] - 8.0, t[i] + 8.0);
                let f = |v: f64, t: &mut Vec<f64>| {
                    let old = t[i];
                    t[i] = v;
                    let r = eval(t);
                    t[i] = old;
                    r
                };
                let mut c = b - invphi * (b - a);
                let mut d = a + invphi * (b - a);
                let (mut fc, mut fd) = (f(c, &mut t), f(d, &mut t));
                while b - a > 1e-7 {
                    if fc > fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - invphi * (b - a);
                        fc = f(c, &mut t);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + invphi * (b - a);
                        fd = f(d, &mut t);
                    }
                }
                let v = 0.5 * (a + b);
                let fv = f(v, &mut t);
                if fv > cur {
                    t[i] = v;
                    cur = fv;
                }
            }
            if cur - before < 1e-11 {
                break;
            }
        }
        best = best.max(cur);
    }
    best
}

/// `β^β (1-β)^(1-β) inf_{p,q>0} (h00 + h10 p + h01 q + h11 p q) / (p q)^β`,
/// minimised by Newton in `(log p, log q)` where the objective is convex.
pub fn variational_reduction(h: [f64; 4], beta: f64) -> f64 {
    let [h00, h10, h01, h11] = h;
    let obj = |u: f64, v: f64| -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let terms = [(h00, 0.0, 0.0), (h10, 1.0, 0.0), (h01, 0.0, 1.0), (h11, 1.0, 1.0)];
        let logs: Vec<f64> = terms.iter().map(|&(c, a, b)| c.ln() + a * u + b * v).collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
        let tot: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / tot).collect();
        let ma = p[1] + p[3];
        let mb = p[2] + p[3];
        let val = mx + tot.ln() - beta * (u + v);
        let grad = [ma - beta, mb - beta];
        let hess = [[ma - ma * ma, p[3] - ma * mb], [p[3] - ma * mb, mb - mb * mb]];
        (val, grad, hess)
    };
    let (mut u, mut v) = (0.0, 0.0);
    let (mut val, mut g, mut hs) = obj(u, v);
    for _ in 0..200 {
        let det = hs[0][0] * hs[1][1] - hs[0][1] * hs[1][0] + 1e-14;
        let du = (hs[1][1] * g[0] - hs[0][1] * g[1]) / det;
        let dv = (hs[0][0] * g[1] - hs[1][0] * g[0]) / det;
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let (nv, ng, nh) = obj(u - t * du, v - t * dv);
            if nv < val {
                u -= t * du;
                v -= t * dv;
                val = nv;
                g = ng;
                hs = nh;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || g[0].abs().max(g[1].abs()) < 1e-13 {
            break;
        }
    }
    (xlogx(beta) + xlogx(1.0 - beta) + val).exp()
}

/// Connected bipartite graphs with `rows <= cols <= max_side`, one per class
/// under row and column relabelling, with at least one perfect row matching.
/// Each graph is a 0/1 matrix of present entries.
pub fn bipartite_classes(max_side: usize) -> Vec<Vec<Vec<bool>>> {
    let mut out = Vec::new();
    for rows in 1..=max_side {
        for cols in rows..=max_side {
            let perms = permutations(cols);
            let mut seen = BTreeSet::new();
            for mask in 0u32..1 << (rows * cols) {
                let row_masks: Vec<u32> = (0..rows).map(|i| mask >> (i * cols) & ((1 << cols) - 1)).collect();
                let canon = perms
                    .iter()
                    .map(|p| {
                        let mut r: Vec<u32> = row_masks
                            .iter()
                            .map(|&rm| (0..cols).filter(|&j| rm >> j & 1 == 1).map(|j| 1u32 << p[j]).sum())
                            .collect();
                        r.sort_unstable();
                        r
                    })
                    .min()
                    .unwrap();
                if !seen.insert(canon.clone()) {
                    continue;
                }
                let m: Vec<Vec<bool>> = canon.iter().map(|&rm| (0..cols).map(|j| rm >> j & 1 == 1).collect()).collect();
                if connected(&m) && has_row_matching(&m) {
                    out.push(m);
                }
            }
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn connected(m: &[Vec<bool>]) -> bool {
    let (r, c) = (m.len(), m[0].len());
    let mut seen = vec![false; r + c];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        let nbrs: Vec<usize> =
            if v < r { (0..c).filter(|&j| m[v][j]).map(|j| r + j).collect() } else { (0..r).filter(|&i| m[i][v - r]).collect() };
        for w in nbrs {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn has_row_matching(m: &[Vec<bool>]) -> bool {
    fn rec(m: &[Vec<bool>], row: usize, used: &mut [bool]) -> bool {
        if row == m.len() {
            return true;
        }
        for j in 0..m[row].len() {
            if m[row][j] && !used[j] {
                used[j] = true;
                if rec(m, row + 1, used) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    rec(m, 0, &mut vec![false; m[0].len()])
}

/// Weight matrix with the given entry for each present edge.
pub fn weights_of(m: &[Vec<bool>], mut w: impl FnMut(usize, usize) -> f64) -> Vec<Vec<Option<f64>>> {
    m.iter().enumerate().map(|(i, row)| row.iter().enumerate().map(|(j, &p)| p.then(|| w(i, j))).collect()).collect()
}

/// Node of the model with the given name.
pub fn node(m: &MultiGM, name: &str) -> NodeId {
    m.graph().node_by_name(name).unwrap()
}
