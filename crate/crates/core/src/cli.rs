//! Commands behind the `gaugepf` binary.
//!
//! Each command takes a parsed model and returns a [`Report`]: a deterministic
//! JSON document with the command name, the SHA-256 digest of the input, the
//! seed, the results and diagnostics, plus the process exit status.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::bp::{
    bethe_free_energy, bp_contract_sequence, bp_residual, marginals_from_gauge, residual_labels, saddle_check, solve_bp,
    SolverConfig,
};
use crate::error::{Error, Result};
use crate::loops::loop_series_sum;
use crate::model::{Config, MultiGM};
use crate::multigraph::{DirectedEdge, EdgeId, MultiGraph};
use crate::poly::FactoredGaugePoly;
use crate::random::random_soft_model_with_edges;
use crate::verify::{verify_model, Check, Fault, Status, VerifyOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    InvariantFailure,
    NotConverged,
    InputError,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::InvariantFailure => 1,
            Outcome::NotConverged => 2,
            Outcome::InputError => 3,
        }
    }

    pub fn for_error(e: &Error) -> Self {
        match e {
            Error::NotConverged { .. } | Error::GaugeNotConverged => Outcome::NotConverged,
            _ => Outcome::InputError,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputInfo {
    /// `file` or `random`.
    pub source: String,
    /// `sha256:<hex>` of the model file bytes, or of the generator parameters.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub status: Outcome,
    pub exit_code: i32,
    pub input: InputInfo,
    pub seed: u64,
    pub results: Value,
    pub diagnostics: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    fn new(command: &str, input: InputInfo, seed: u64, status: Outcome, results: Value, diagnostics: Value) -> Self {
        Report {
            command: command.into(),
            status,
            exit_code: status.code(),
            input,
            seed,
            results,
            diagnostics,
            error: None,
        }
    }

    pub fn failure(command: &str, input: InputInfo, seed: u64, e: &Error) -> Self {
        let status = Outcome::for_error(e);
        let mut r = Report::new(command, input, seed, status, Value::Null, Value::Null);
        r.error = Some(e.to_string());
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(7 + 2 * d.len());
    s.push_str("sha256:");
    for b in d.iter() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn file_input(bytes: &[u8]) -> InputInfo {
    InputInfo { source: "file".into(), digest: sha256_hex(bytes) }
}

pub fn random_input(count: usize, edges: usize, seed: u64) -> InputInfo {
    InputInfo { source: "random".into(), digest: sha256_hex(format!("random:{count}:{edges}:{seed}").as_bytes()) }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OrderSpec {
    NormalFirst,
    Ids,
    MinArity,
    Explicit(Vec<String>),
}

impl std::str::FromStr for OrderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "normal-first" => OrderSpec::NormalFirst,
            "ids" => OrderSpec::Ids,
            "min-arity" => OrderSpec::MinArity,
            list => {
                let names: Vec<String> = list.split(',').map(|t| t.trim().to_string()).collect();
                if names.iter().any(String::is_empty) {
                    return Err(Error::InvalidOrder(format!("empty edge id in {list:?}")));
                }
                OrderSpec::Explicit(names)
            }
        })
    }
}

impl OrderSpec {
    pub fn resolve(&self, g: &MultiGraph) -> Result<Vec<EdgeId>> {
        let order = match self {
            OrderSpec::NormalFirst => g.normal_first_order(),
            OrderSpec::Ids => g.edge_ids().collect(),
            OrderSpec::MinArity => g.min_arity_order(),
            OrderSpec::Explicit(names) => names
                .iter()
                .map(|n| g.edge_by_name(n).ok_or_else(|| Error::InvalidOrder(format!("unknown edge {n:?}"))))
                .collect::<Result<_>>()?,
        };
        g.validate_order(&order)?;
        Ok(order)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContractMode {
    Exact,
    BpSequence,
}

impl std::str::FromStr for ContractMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ContractMode::Exact),
            "bp-sequence" => Ok(ContractMode::BpSequence),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}; expected exact or bp-sequence"))),
        }
    }
}

fn edge_name(g: &MultiGraph, e: EdgeId) -> String {
    g.edge_name(e).map(str::to_string).unwrap_or_else(|_| e.to_string())
}

fn directed_name(g: &MultiGraph, d: DirectedEdge) -> String {
    format!("{}{}", edge_name(g, d.edge), if d.polarity == crate::Polarity::Plus { '+' } else { '-' })
}

fn config_json(g: &MultiGraph, c: &Config) -> Value {
    let map: Map<String, Value> = g.edge_ids().zip(&c.0).map(|(e, &b)| (edge_name(g, e), json!(u8::from(b)))).collect();
    Value::Object(map)
}

fn colored_edges(g: &MultiGraph, c: &Config) -> Vec<String> {
    g.edge_ids().zip(&c.0).filter(|(_, &b)| b).map(|(e, _)| edge_name(g, e)).collect()
}

fn solver_json(cfg: &SolverConfig) -> Value {
    json!({
        "damping": cfg.damping,
        "tol": cfg.tol,
        "max_sweeps": cfg.max_sweeps,
        "restarts": cfg.restarts,
        "soften": cfg.soften,
    })
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    if approx == exact {
        0.0
    } else {
        (approx - exact).abs() / exact.abs()
    }
}

/// `Z`, `log Z`, the MAP energy and an argmax configuration by enumeration.
pub fn exact(m: &MultiGM, input: InputInfo, seed: u64, guard: usize) -> Result<Report> {
    let z = m.partition_exact_with_guard(guard)?;
    let map = m.map_energy_exact()?;
    let g = m.graph();
    let results = json!({
        "z": z,
        "log_z": z.ln(),
        "map_energy": map.energy,
        "map_weight": map.weight,
        "argmax": config_json(g, &map.config),
    });
    let diagnostics = json!({ "edges": m.num_edges(), "nodes": g.num_nodes(), "soft": m.is_soft(), "guard": guard });
    Ok(Report::new("exact", input, seed, Outcome::Ok, results, diagnostics))
}

/// Maximal BP gauge with its value, beliefs and Bethe free energy.
pub fn bp(m: &MultiGM, input: InputInfo, cfg: &SolverConfig, guard: usize) -> Result<Report> {
    let sol = solve_bp(m, cfg)?;
    let sm = &sol.model;
    let g = sm.graph();
    let x = &sol.best.x;
    let gauge: Map<String, Value> =
        g.directed_edges().map(|d| Ok((directed_name(g, d), json!(x.get(d)?)))).collect::<Result<_>>()?;
    let beta: Map<String, Value> =
        g.edge_ids().map(|e| Ok((edge_name(g, e), json!(x.edge_beta(e)?)))).collect::<Result<_>>()?;
    let beliefs = marginals_from_gauge(sm, x)?;
    let f = bethe_free_energy(sm, &beliefs)?;
    let forest = g.is_forest();
    let mut results = json!({
        "z_vbp": sol.best.z,
        "log_z_vbp": sol.best.log_z,
        "gauge": gauge,
        "beta": beta,
        "residual": sol.best.residual,
        "bethe_free_energy": f,
        "stationary_values": sol.stationary_values,
        "softened": sol.softened,
        "exact": forest,
    });
    if m.num_edges() <= guard {
        let z = sm.partition_exact_with_guard(guard)?;
        results["z_exact"] = json!(z);
        results["ratio"] = json!(sol.best.z / z);
        results["relative_error"] = json!(rel_err(sol.best.z, z));
    }
    let residuals: Map<String, Value> = residual_labels(sm)
        .into_iter()
        .zip(bp_residual(sm, x)?)
        .map(|((n, d), r)| (format!("{}/{}", g.node_name(n).unwrap_or("?"), directed_name(g, d)), json!(r)))
        .collect();
    results["residuals"] = Value::Object(residuals);
    let saddle: Map<String, Value> = g
        .edge_ids()
        .map(|e| Ok((edge_name(g, e), json!(saddle_check(sm, x, e)?.det))))
        .collect::<Result<_>>()?;
    let converged = sol.runs.iter().filter(|r| r.converged).count();
    let diagnostics = json!({
        "solver": solver_json(cfg),
        "restarts_converged": converged,
        "best_restart": sol.best.restart,
        "sweeps": sol.best.sweeps,
        "polytope_violation": beliefs.polytope_violation(sm)?,
        "interior_margin": beliefs.interior_margin(),
        "saddle_det": saddle,
    });
    Ok(Report::new("bp", input, cfg.seed, Outcome::Ok, results, diagnostics))
}

/// Edge contraction along an order, exactly or as a BP contraction sequence.
pub fn contract(
    m: &MultiGM,
    input: InputInfo,
    order: &OrderSpec,
    mode: ContractMode,
    cfg: &SolverConfig,
    guard: usize,
) -> Result<Report> {
    let g = m.graph();
    let order = order.resolve(g)?;
    let names: Vec<String> = order.iter().map(|&e| edge_name(g, e)).collect();
    let z_exact = m.partition_exact_with_guard(guard).ok();
    match mode {
        ContractMode::Exact => {
            let z_model = m.contract_all(&order)?;
            let z_poly = FactoredGaugePoly::from_model(m)?.contract_all(&order)?;
            // exact Z of every intermediate model; constant along the sequence
            let mut steps = Vec::with_capacity(order.len() + 1);
            let mut cur = m.clone();
            for step in 0..=order.len() {
                if step > 0 {
                    cur = cur.contract_model(order[step - 1])?;
                }
                let z = if cur.num_edges() == 0 { Some(cur.edgeless_value()) } else { cur.partition_exact_with_guard(guard).ok() };
                steps.push(json!({
                    "m": step,
                    "eliminated": step.checked_sub(1).map(|i| names[i].clone()),
                    "edges_left": cur.num_edges(),
                    "z": z,
                }));
            }
            let mut results = json!({ "order": names, "steps": steps, "z": z_model, "z_polynomial": z_poly });
            if let Some(z) = z_exact {
                results["z_exact"] = json!(z);
                results["relative_error"] = json!(rel_err(z_model, z));
            }
            let diagnostics = json!({ "edges": m.num_edges(), "polynomial_relative_gap": rel_err(z_poly, z_model) });
            Ok(Report::new("contract", input, cfg.seed, Outcome::Ok, results, diagnostics))
        }
        ContractMode::BpSequence => {
            let seq = bp_contract_sequence(m, &order, cfg)?;
            let stages: Vec<Value> = seq
                .stages
                .iter()
                .map(|s| {
                    json!({
                        "m": s.m,
                        "eliminated": s.eliminated.map(|e| edge_name(g, e)),
                        "edges_left": s.edges_left,
                        "z_vbp": s.z_vbp,
                        "converged": s.converged,
                        "residual": s.residual,
                    })
                })
                .collect();
            let decreases: Vec<Value> = seq.decreases.iter().map(|&(m, d)| json!({ "m": m, "relative_drop": d })).collect();
            let results = json!({
                "order": names,
                "stages": stages,
                "z_final": seq.z_final,
                "monotone": seq.is_monotone(),
                "lower_bound_holds": seq.lower_bound_holds(crate::bp::MONOTONE_SLACK),
                "decreases": decreases,
                "softened": seq.softened,
            });
            let status = if seq.all_converged() { Outcome::Ok } else { Outcome::NotConverged };
            let diagnostics = json!({ "solver": solver_json(cfg), "all_converged": seq.all_converged() });
            Ok(Report::new("contract", input, cfg.seed, status, results, diagnostics))
        }
    }
}

/// Loop series at the maximal BP gauge, terms sorted by magnitude.
pub fn loops(m: &MultiGM, input: InputInfo, cfg: &SolverConfig, guard: usize) -> Result<Report> {
    let sol = solve_bp(m, cfg)?;
    let sm = &sol.model;
    let g = sm.graph();
    if sm.num_edges() > guard {
        return Err(Error::EnumerationGuard { edges: sm.num_edges(), guard });
    }
    let ls = loop_series_sum(sm, &sol.best.x)?;
    let z = sm.partition_exact_with_guard(guard)?;
    let mut terms = ls.terms.clone();
    terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.index().cmp(&b.0.index())));
    let terms: Vec<Value> = terms.iter().map(|(c, t)| json!({ "edges": colored_edges(g, c), "term": t })).collect();
    let results = json!({
        "count": ls.terms.len(),
        "terms": terms,
        "sum": ls.sum,
        "z_vbp": sol.best.z,
        "z_exact": z,
        "relative_error": rel_err(ls.sum, z),
        "softened": sol.softened,
    });
    let diagnostics = json!({ "solver": solver_json(cfg), "residual": sol.best.residual });
    Ok(Report::new("loops", input, cfg.seed, Outcome::Ok, results, diagnostics))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerifyTarget {
    Model,
    Random { count: usize, edges: usize },
}

fn checks_json(checks: &[Check]) -> Value {
    serde_json::to_value(checks).expect("checks serialise")
}

/// Invariant suite over one model or `count` random soft models with `edges` edges.
pub fn verify(
    m: Option<&MultiGM>,
    target: &VerifyTarget,
    input: InputInfo,
    cfg: &SolverConfig,
    fault: Fault,
) -> Result<Report> {
    let opts = VerifyOptions { solver: cfg.clone(), fault, samples: 3, seed: cfg.seed };
    let models: Vec<MultiGM> = match (target, m) {
        (VerifyTarget::Model, Some(m)) => vec![m.clone()],
        (VerifyTarget::Model, None) => return Err(Error::InvalidConfig("verify needs a model file or --random".into())),
        (VerifyTarget::Random { count, edges }, _) => {
            if *edges == 0 || *count == 0 {
                return Err(Error::InvalidConfig("--random and --edges must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..*count).map(|_| random_soft_model_with_edges(&mut rng, *edges)).collect::<Result<_>>()?
        }
    };
    let mut per_model = Vec::with_capacity(models.len());
    let mut summary: Vec<(&'static str, Status, f64)> = Vec::new();
    let (mut any_fail, mut any_nonconv) = (false, false);
    for (i, model) in models.iter().enumerate() {
        let v = verify_model(model, &opts)?;
        any_fail |= !v.passed();
        any_nonconv |= !v.converged();
        for c in &v.checks {
            match summary.iter_mut().find(|s| s.0 == c.name) {
                Some(s) => {
                    s.2 = s.2.max(c.worst);
                    s.1 = match (s.1, c.status) {
                        (Status::Fail, _) | (_, Status::Fail) => Status::Fail,
                        (Status::Pass, _) | (_, Status::Pass) => Status::Pass,
                        _ => Status::Skipped,
                    };
                }
                None => summary.push((c.name, c.status, c.worst)),
            }
        }
        per_model.push(json!({
            "index": i,
            "edges": model.num_edges(),
            "nodes": model.graph().num_nodes(),
            "converged": v.converged(),
            "z_exact": v.z_exact,
            "z_vbp": v.bp.as_ref().map(|s| s.best.z),
            "checks": checks_json(&v.checks),
        }));
    }
    let invariants: Map<String, Value> = summary
        .iter()
        .map(|(n, s, w)| (n.to_string(), json!({ "status": s, "worst": w })))
        .collect();
    let status = if any_fail {
        Outcome::InvariantFailure
    } else if any_nonconv {
        Outcome::NotConverged
    } else {
        Outcome::Ok
    };
    let results = json!({ "models": models.len(), "passed": !any_fail && !any_nonconv, "invariants": invariants });
    let diagnostics = json!({ "solver": solver_json(cfg), "fault": fault, "per_model": per_model });
    Ok(Report::new("verify", input, cfg.seed, status, results, diagnostics))
}
