use thiserror::Error;

use crate::multigraph::{DirectedEdge, EdgeId, NodeId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),

    #[error("unknown directed edge {0}")]
    UnknownDirectedEdge(DirectedEdge),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("enumeration refused: {edges} edges exceeds the guard of {guard}")]
    EnumerationGuard { edges: usize, guard: usize },

    #[error("every configuration has zero weight")]
    AllWeightsZero,

    #[error("softening parameter must be positive, got {0}")]
    InvalidSoftening(f64),

    #[error("factor table of node {0} is identically zero")]
    ZeroTable(NodeId),

    #[error("node {node} would carry {vars} variables (cap {cap}); reduce the instance size")]
    TooManyVariables { node: NodeId, vars: usize, cap: usize },

    #[error("invalid factor table for node {node}: {reason}")]
    InvalidFactor { node: NodeId, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("gauge values must be positive and finite ({0})")]
    InvalidGauge(String),

    #[error("degenerate edge coefficients (h10 = {h10}, h01 = {h01}); soften the model first")]
    DegenerateEdge { h10: f64, h01: f64 },

    #[error("model is not soft; soften it before running BP")]
    NotSoft,

    #[error("beliefs leave the marginal polytope (violation {0:e})")]
    BeliefOutsidePolytope(f64),

    #[error("edge {0} is a self-edge; BP self-edge contraction is not polynomial")]
    SelfEdge(EdgeId),

    #[error("gauge is not a converged BP gauge")]
    GaugeNotConverged,

    #[error("BP did not converge in any of {restarts} restarts (best residual {best_residual:e})")]
    NotConverged { restarts: usize, best_residual: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid elimination order: {0}")]
    InvalidOrder(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
