//! Generalization gaps, rank correlations and grid reports.

mod grid;
mod kendall;

pub use grid::{
    build_grid_report, recompute_coefficients, write_grid_outputs, CoefficientSkip, Failure,
    GridReport, GridSpec, RunEntry,
};
pub use kendall::{granulated_kendall, kendall_tau, AxisSummary, Coefficients, GridPoint};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::trajectory::TrajectoryBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Largest recorded test risk minus the final train risk.
    #[default]
    Worst,
    /// Final test risk minus final train risk.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub gap_worst: f64,
    pub gap_final: f64,
}

impl GapRecord {
    pub fn get(&self, mode: GapMode) -> f64 {
        match mode {
            GapMode::Worst => self.gap_worst,
            GapMode::Final => self.gap_final,
        }
    }
}

/// Both gap variants from the bundle's risk history.
pub fn gap_record(bundle: &TrajectoryBundle) -> Result<GapRecord> {
    let history = &bundle.risk_history;
    let last = history.last().ok_or(TopoError::MissingRiskHistory)?;
    let worst_test = history
        .iter()
        .map(|r| r.test_risk)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GapRecord {
        gap_worst: worst_test - last.train_risk,
        gap_final: last.test_risk - last.train_risk,
    })
}

pub fn generalization_gap(bundle: &TrajectoryBundle, mode: GapMode) -> Result<f64> {
    Ok(gap_record(bundle)?.get(mode))
}
