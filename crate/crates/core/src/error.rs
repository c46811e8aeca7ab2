use std::path::PathBuf;

use thiserror::Error;

use crate::trajectory::ValidationReport;

pub type Result<T> = std::result::Result<T, TopoError>;

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite entry in {what} at row {row}, column {col}")]
    NonFiniteEntry {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("metadata parse error: {0}")]
    MetadataParse(String),

    #[error("checksum mismatch for {file}: declared {declared}, found {found}")]
    ChecksumMismatch {
        file: String,
        declared: String,
        found: String,
    },

    #[error("bundle violates {} invariant(s): {}", .0.violations.len(), .0.summary())]
    InvalidBundle(ValidationReport),

    #[error("bundle has no {0} trajectory")]
    MissingTrajectory(&'static str),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error(
        "allocation of {required_bytes} bytes exceeds the memory budget of {budget_bytes} bytes"
    )]
    DimensionOverflow {
        required_bytes: u128,
        budget_bytes: u128,
    },

    #[error("pseudometric order p = {0} is invalid (need p >= 1)")]
    InvalidOrder(f64),

    #[error("subsampling selects no columns (fraction {fraction}, m = {columns})")]
    EmptySelection { fraction: f64, columns: usize },

    #[error("alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),

    #[error("degenerate dimension fit (slope {slope})")]
    DegenerateFit { slope: f64 },

    #[error("instance too large for exhaustive enumeration: {size} points (max {max})")]
    TooLarge { size: usize, max: usize },

    #[error(
        "weighting solver did not reach tolerance (residual {residual:e}, tolerance {tolerance:e})"
    )]
    SolverDiverged { residual: f64, tolerance: f64 },

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("no grid slice yields a defined correlation")]
    NoValidSlice,

    #[error("risk history is empty")]
    MissingRiskHistory,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl TopoError {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            TopoError::MissingFile(_) => "MissingFile",
            TopoError::ShapeMismatch(_) => "ShapeMismatch",
            TopoError::NonFiniteEntry { .. } => "NonFiniteEntry",
            TopoError::MetadataParse(_) => "MetadataParse",
            TopoError::ChecksumMismatch { .. } => "ChecksumMismatch",
            TopoError::InvalidBundle(_) => "InvalidBundle",
            TopoError::MissingTrajectory(_) => "MissingTrajectory",
            TopoError::InvalidSpec(_) => "InvalidSpec",
            TopoError::DimensionOverflow { .. } => "DimensionOverflow",
            TopoError::InvalidOrder(_) => "InvalidOrder",
            TopoError::EmptySelection { .. } => "EmptySelection",
            TopoError::NegativeAlpha(_) => "NegativeAlpha",
            TopoError::DegenerateFit { .. } => "DegenerateFit",
            TopoError::TooLarge { .. } => "TooLarge",
            TopoError::SolverDiverged { .. } => "SolverDiverged",
            TopoError::NonPositiveScale(_) => "NonPositiveScale",
            TopoError::LengthMismatch { .. } => "LengthMismatch",
            TopoError::DegenerateInput(_) => "DegenerateInput",
            TopoError::NoValidSlice => "NoValidSlice",
            TopoError::MissingRiskHistory => "MissingRiskHistory",
            TopoError::Io(_) => "IoError",
        }
    }

    /// True for errors caused by malformed or missing inputs rather than by
    /// a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            TopoError::MissingFile(_)
                | TopoError::ShapeMismatch(_)
                | TopoError::NonFiniteEntry { .. }
                | TopoError::MetadataParse(_)
                | TopoError::ChecksumMismatch { .. }
                | TopoError::InvalidBundle(_)
                | TopoError::MissingTrajectory(_)
                | TopoError::InvalidSpec(_)
        )
    }
}
