//! Partition functions of binary multi-graph graphical models.
//!
//! Variables live on edges and factors on nodes. The crate computes `Z`
//! four ways (enumeration, gauge-transformed series, BP gauges with edge
//! contraction, and the loop series) so each route can check the others.

pub mod bp;
pub mod cli;
pub mod error;
pub mod format;
pub mod gauge;
pub mod loops;
pub mod model;
pub mod multigraph;
pub mod poly;
pub mod random;
pub mod verify;

pub use error::{Error, Result};
pub use gauge::{GaugeMatrix, GaugeVector};
pub use model::{Config, FactorTable, MapResult, MultiGM};
pub use multigraph::{DirectedEdge, EdgeId, MultiGraph, NodeId, Polarity};
pub use poly::{FactoredGaugePoly, NodePoly, QuadCoeffs};
