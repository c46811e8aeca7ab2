//! Topological complexity measures of optimization trajectories and their
//! rank correlation with the generalization gap.
//!
//! The pipeline is: load a [`trajectory::TrajectoryBundle`], build a
//! [`metrics::DistanceMatrix`] between recorded iterates, evaluate
//! `E_alpha` ([`ph0`]), magnitude ([`magnitude`]) and PH-dimension on it,
//! then correlate with the gap over a hyperparameter grid ([`analysis`]).

pub mod analysis;
pub mod complexity;
pub mod error;
pub mod magnitude;
pub mod matrix;
pub mod metrics;
pub mod ph0;
mod serde_util;
pub mod synth;
pub mod trajectory;
mod unionfind;

/// Points closer than this are identified before any computation.
pub const IDENTIFICATION_TOL: f64 = 1e-12;

pub use error::{Result, TopoError};
pub use matrix::Matrix;
pub use metrics::{DistanceMatrix, MemoryBudget, MetricKind};
pub use trajectory::{load_bundle, write_bundle, TrajectoryBundle};
