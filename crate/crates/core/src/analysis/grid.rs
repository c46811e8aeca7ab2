use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kendall::{granulated_kendall, Coefficients, GridPoint};
use super::{gap_record, GapMode, GapRecord};
use crate::complexity::{compute_complexities, ComplexityRecord, ComputeSpec, ScaleToken};
use crate::error::{Result, TopoError};
use crate::magnitude::SolverConfig;
use crate::metrics::{MemoryBudget, MetricKind, ProjectionSpec};
use crate::ph0::DimProtocol;
use crate::trajectory::{RunMeta, TrajectoryBundle};

/// What to compute for every run of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub metrics: Vec<MetricKind>,
    pub alphas: Vec<f64>,
    pub scales: Vec<ScaleToken>,
    pub pmag: bool,
    pub ph_dim: bool,
    pub dim_protocol: Option<DimProtocol>,
    pub subsample: Option<f64>,
    pub projection: Option<ProjectionSpec>,
    pub solver: SolverConfig,
    pub seed: u64,
    pub gap_mode: GapMode,
    pub degenerate_as_zero: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        let c = ComputeSpec::default();
        GridSpec {
            metrics: vec![c.metric],
            alphas: c.alphas,
            scales: c.scales,
            pmag: c.pmag,
            ph_dim: c.ph_dim,
            dim_protocol: None,
            subsample: c.subsample,
            projection: None,
            solver: c.solver,
            seed: 0,
            gap_mode: GapMode::Worst,
            degenerate_as_zero: false,
        }
    }
}

impl GridSpec {
    pub fn compute_spec(&self, metric: MetricKind) -> ComputeSpec {
        ComputeSpec {
            metric,
            alphas: self.alphas.clone(),
            scales: self.scales.clone(),
            pmag: self.pmag,
            ph_dim: self.ph_dim,
            dim_protocol: self.dim_protocol.clone(),
            subsample: self.subsample,
            projection: self.projection,
            solver: self.solver,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(TopoError::InvalidSpec("grid spec lists no metrics".into()));
        }
        if let Some(&a) = self.alphas.iter().find(|a| !(**a >= 0.0)) {
            return Err(TopoError::NegativeAlpha(a));
        }
        if let Some(f) = self.subsample.filter(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(TopoError::InvalidSpec(format!(
                "subsample fraction {f} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub run_meta: RunMeta,
    /// `None` when the gap could not be computed (see failures).
    pub gap: Option<GapRecord>,
    /// One record per metric that succeeded.
    pub complexities: Vec<ComplexityRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub run_id: String,
    /// Metric token, when the failure is specific to one metric.
    pub metric: Option<String>,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn new(run_id: &str, metric: Option<String>, err: &TopoError) -> Self {
        Failure {
            run_id: run_id.to_string(),
            metric,
            kind: err.kind().to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSkip {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub spec: GridSpec,
    pub runs: Vec<RunEntry>,
    /// Keyed by `<complexity>_<metric>`, e.g. `e_alpha_1.0_rho-p1`.
    pub coefficients: BTreeMap<String, Coefficients>,
    pub skipped_coefficients: Vec<CoefficientSkip>,
    pub failures: Vec<Failure>,
}

fn run_one(
    run_id: &str,
    bundle: &Result<TrajectoryBundle>,
    spec: &GridSpec,
    budget: &MemoryBudget,
) -> (Option<RunEntry>, Vec<Failure>) {
    let bundle = match bundle {
        Ok(b) => b,
        Err(e) => return (None, vec![Failure::new(run_id, None, e)]),
    };
    let mut failures = Vec::new();
    let gap = gap_record(bundle)
        .map_err(|e| failures.push(Failure::new(run_id, None, &e)))
        .ok();
    let mut complexities = Vec::new();
    for &metric in &spec.metrics {
        match compute_complexities(bundle, &spec.compute_spec(metric), budget) {
            Ok(rec) => complexities.push(rec),
            Err(e) => failures.push(Failure::new(run_id, Some(metric.token()), &e)),
        }
    }
    let entry = RunEntry {
        run_id: run_id.to_string(),
        run_meta: bundle.run_meta.clone(),
        gap,
        complexities,
    };
    (Some(entry), failures)
}

/// Grid points per `<complexity>_<metric>` key.
fn collect_points(runs: &[RunEntry], mode: GapMode) -> BTreeMap<String, Vec<(String, GridPoint)>> {
    let mut out: BTreeMap<String, Vec<(String, GridPoint)>> = BTreeMap::new();
    for run in runs {
        let Some(gap) = &run.gap else { continue };
        for rec in &run.complexities {
            for (name, value) in rec.values() {
                out.entry(format!("{name}_{}", rec.metric.token()))
                    .or_default()
                    .push((
                        run.run_id.clone(),
                        GridPoint {
                            learning_rate: run.run_meta.learning_rate,
                            batch_size: run.run_meta.batch_size as f64,
                            complexity: value,
                            gap: gap.get(mode),
                        },
                    ));
            }
        }
    }
    out
}

/// Granulated coefficients for every complexity/metric pair of `runs`.
pub fn recompute_coefficients(
    runs: &[RunEntry],
    mode: GapMode,
    degenerate_as_zero: bool,
) -> (BTreeMap<String, Coefficients>, Vec<CoefficientSkip>) {
    let mut coefficients = BTreeMap::new();
    let mut skipped = Vec::new();
    for (key, pts) in collect_points(runs, mode) {
        let points: Vec<GridPoint> = pts.into_iter().map(|(_, p)| p).collect();
        match granulated_kendall(&points, degenerate_as_zero) {
            Ok(c) => {
                coefficients.insert(key, c);
            }
            Err(e) => skipped.push(CoefficientSkip {
                key,
                reason: e.to_string(),
            }),
        }
    }
    (coefficients, skipped)
}

/// Computes every requested complexity for every run (in parallel on the
/// current rayon pool) and correlates them with the generalization gap.
///
/// Runs whose bundle failed to load, or metrics that failed on a run, are
/// listed in `failures`; the rest of the grid is still reported.
pub fn build_grid_report(
    mut inputs: Vec<(String, Result<TrajectoryBundle>)>,
    spec: &GridSpec,
    budget: &MemoryBudget,
) -> Result<GridReport> {
    spec.validate()?;
    inputs.sort_by(|a, b| a.0.cmp(&b.0));
    let results: Vec<(Option<RunEntry>, Vec<Failure>)> = inputs
        .par_iter()
        .map(|(id, bundle)| run_one(id, bundle, spec, budget))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (entry, f) in results {
        runs.extend(entry);
        failures.extend(f);
    }
    let (coefficients, skipped_coefficients) =
        recompute_coefficients(&runs, spec.gap_mode, spec.degenerate_as_zero);
    Ok(GridReport {
        spec: spec.clone(),
        runs,
        coefficients,
        skipped_coefficients,
        failures,
    })
}

fn csv_err(e: csv::Error) -> TopoError {
    TopoError::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json`, the flat `report.csv`, and one
/// `scatter/<complexity>_<metric>.csv` per coefficient key.
pub fn write_grid_outputs(report: &GridReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("scatter"))?;
    let json =
        serde_json::to_vec_pretty(report).map_err(|e| TopoError::MetadataParse(e.to_string()))?;
    fs::write(dir.join("report.json"), json)?;

    let mut flat = csv::Writer::from_path(dir.join("report.csv")).map_err(csv_err)?;
    flat.write_record([
        "run_id",
        "learning_rate",
        "batch_size",
        "metric",
        "complexity",
        "value",
        "gap_worst",
        "gap_final",
    ])
    .map_err(csv_err)?;
    for run in &report.runs {
        for rec in &run.complexities {
            for (name, value) in rec.values() {
                flat.write_record([
                    run.run_id.clone(),
                    run.run_meta.learning_rate.to_string(),
                    run.run_meta.batch_size.to_string(),
                    rec.metric.token(),
                    name,
                    value.to_string(),
                    opt(run.gap.as_ref().map(|g| g.gap_worst)),
                    opt(run.gap.as_ref().map(|g| g.gap_final)),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    flat.flush()?;

    for (key, pts) in collect_points(&report.runs, report.spec.gap_mode) {
        let mut w = csv::Writer::from_path(dir.join("scatter").join(format!("{key}.csv")))
            .map_err(csv_err)?;
        w.write_record(["run_id", "learning_rate", "batch_size", "complexity", "gap"])
            .map_err(csv_err)?;
        for (id, p) in pts {
            w.write_record([
                id,
                p.learning_rate.to_string(),
                p.batch_size.to_string(),
                p.complexity.to_string(),
                p.gap.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}
