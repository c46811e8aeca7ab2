//! Per-bundle complexity computation: distance matrix, `E_alpha`,
//! magnitudes and PH-dimension for one trajectory under one metric.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, TopoError};
use crate::magnitude::{magnitude_at_scale, metric_identification, SolverConfig, SolverKind};
use crate::metrics::{
    euclidean_distance_matrix, loss_pseudometric_matrix, subsample_binary_columns,
    subsample_columns, zero_one_pseudometric_matrix, DistanceMatrix, MemoryBudget, MetricKind,
    ProjectionSpec,
};
use crate::ph0::{
    e_alpha, estimate_ph_dim_flagged, minimum_spanning_edges, DimProtocol, PhDimEstimate,
};
use crate::trajectory::TrajectoryBundle;
use crate::IDENTIFICATION_TOL;

/// Formats a real for use in keys: `1.0`, `0.5`, `0.01`, `1e-5`.
pub fn real_label(x: f64) -> String {
    format!("{x:?}")
}

/// A magnitude scale, either fixed or `sqrt(n_train)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleToken {
    SqrtN,
    Value(f64),
}

impl ScaleToken {
    pub fn resolve(&self, n_train: u64) -> f64 {
        match self {
            ScaleToken::SqrtN => (n_train as f64).sqrt(),
            ScaleToken::Value(s) => *s,
        }
    }
}

impl fmt::Display for ScaleToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleToken::SqrtN => f.write_str("sqrt-n"),
            ScaleToken::Value(s) => f.write_str(&real_label(*s)),
        }
    }
}

impl FromStr for ScaleToken {
    type Err = TopoError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sqrt-n" {
            return Ok(ScaleToken::SqrtN);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(ScaleToken::Value(v)),
            Ok(v) => Err(TopoError::NonPositiveScale(v)),
            Err(_) => Err(TopoError::InvalidSpec(format!(
                "scale {s:?} is neither \"sqrt-n\" nor a positive real"
            ))),
        }
    }
}

impl Serialize for ScaleToken {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ScaleToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => ScaleToken::from_str(&v.to_string()),
            Raw::Text(t) => ScaleToken::from_str(&t),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeSpec {
    pub metric: MetricKind,
    pub alphas: Vec<f64>,
    pub scales: Vec<ScaleToken>,
    pub pmag: bool,
    pub ph_dim: bool,
    /// Overrides [`DimProtocol::for_points`] when set.
    pub dim_protocol: Option<DimProtocol>,
    /// Loss-column subsample as a fraction of the whole training set;
    /// `None` keeps every recorded column.
    pub subsample: Option<f64>,
    /// Optional sparse projection before Euclidean distances.
    pub projection: Option<ProjectionSpec>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ComputeSpec {
    fn default() -> Self {
        ComputeSpec {
            metric: MetricKind::RhoP { p: 1.0 },
            alphas: vec![1.0],
            scales: vec![ScaleToken::SqrtN, ScaleToken::Value(0.01)],
            pmag: true,
            ph_dim: false,
            dim_protocol: None,
            subsample: Some(0.10),
            projection: None,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub token: ScaleToken,
    pub scale: f64,
    pub mag: f64,
    pub pmag: f64,
    pub residual: f64,
    pub solver: SolverKind,
    pub conditioning_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRecord {
    pub metric: MetricKind,
    pub n_points: usize,
    /// Classes left after identifying points at distance zero.
    pub n_classes: usize,
    /// Loss columns behind a pseudometric.
    pub n_reference: Option<usize>,
    /// `E_alpha` keyed by `alpha` (`"1.0"`).
    pub e_alpha: BTreeMap<String, f64>,
    /// `Mag(s)` keyed by scale token (`"sqrt-n"`, `"0.01"`).
    pub mag: BTreeMap<String, f64>,
    pub pmag: BTreeMap<String, f64>,
    pub scales: Vec<ScaleRecord>,
    pub ph_dim: Option<PhDimEstimate>,
}

impl ComplexityRecord {
    /// Flat `(name, value)` list: `e_alpha_1.0`, `mag_sqrt-n`,
    /// `pmag_0.01`, `ph_dim`. Degenerate PH-dimension fits are omitted.
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .e_alpha
            .iter()
            .map(|(k, v)| (format!("e_alpha_{k}"), *v))
            .collect();
        out.extend(self.mag.iter().map(|(k, v)| (format!("mag_{k}"), *v)));
        out.extend(self.pmag.iter().map(|(k, v)| (format!("pmag_{k}"), *v)));
        if let Some(est) = self.ph_dim.as_ref().filter(|e| !e.degenerate) {
            out.push(("ph_dim".into(), est.dim));
        }
        out
    }
}

/// Extra fraction to keep so that `target` (of the training set) remains
/// out of `recorded` already retained; 1 when nothing more is dropped.
fn relative_fraction(target: f64, recorded: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(TopoError::InvalidSpec(format!(
            "subsample fraction {target} outside (0, 1]"
        )));
    }
    Ok((target / recorded).min(1.0))
}

/// Distance matrix of the trajectory selected by `spec.metric`.
pub fn distance_matrix_for(
    bundle: &TrajectoryBundle,
    spec: &ComputeSpec,
    budget: &MemoryBudget,
) -> Result<DistanceMatrix> {
    let n = bundle.n_points().unwrap_or(0);
    // n x n f64 matrix
    budget.check((n as u128) * (n as u128) * 8)?;
    match spec.metric {
        MetricKind::Euclidean => {
            euclidean_distance_matrix(&bundle.weights()?.matrix, spec.projection.as_ref(), budget)
        }
        MetricKind::RhoP { p } => {
            let losses = bundle.losses()?;
            match spec.subsample {
                Some(target) => {
                    let f = relative_fraction(target, losses.subsample_fraction)?;
                    if f < 1.0 {
                        loss_pseudometric_matrix(&subsample_columns(losses, f, spec.seed)?, p)
                    } else {
                        loss_pseudometric_matrix(losses, p)
                    }
                }
                None => loss_pseudometric_matrix(losses, p),
            }
        }
        MetricKind::ZeroOne => {
            let losses01 = bundle.losses01()?;
            match spec.subsample {
                Some(target) => {
                    let f = relative_fraction(target, losses01.subsample_fraction)?;
                    if f < 1.0 {
                        zero_one_pseudometric_matrix(&subsample_binary_columns(
                            losses01, f, spec.seed,
                        )?)
                    } else {
                        zero_one_pseudometric_matrix(losses01)
                    }
                }
                None => zero_one_pseudometric_matrix(losses01),
            }
        }
    }
}

/// All requested complexities from a precomputed distance matrix.
pub fn complexities_from_distances(
    d: &DistanceMatrix,
    n_train: u64,
    spec: &ComputeSpec,
) -> Result<ComplexityRecord> {
    let edges = minimum_spanning_edges(d);
    let mut e = BTreeMap::new();
    for &alpha in &spec.alphas {
        e.insert(real_label(alpha), e_alpha(&edges, alpha)?);
    }

    let q = metric_identification(d, IDENTIFICATION_TOL);
    let mut mag = BTreeMap::new();
    let mut pmag = BTreeMap::new();
    let mut scales = Vec::with_capacity(spec.scales.len());
    for token in &spec.scales {
        let s = token.resolve(n_train);
        let r = magnitude_at_scale(&q, s, &spec.solver)?;
        mag.insert(token.to_string(), r.mag);
        if spec.pmag {
            pmag.insert(token.to_string(), r.pmag);
        }
        scales.push(ScaleRecord {
            token: *token,
            scale: s,
            mag: r.mag,
            pmag: r.pmag,
            residual: r.residual,
            solver: r.solver,
            conditioning_flag: r.conditioning_flag,
        });
    }

    let ph_dim = if spec.ph_dim {
        let protocol = spec
            .dim_protocol
            .clone()
            .unwrap_or_else(|| DimProtocol::for_points(d.len(), spec.seed));
        Some(estimate_ph_dim_flagged(d, &protocol)?)
    } else {
        None
    };

    Ok(ComplexityRecord {
        metric: d.kind(),
        n_points: d.len(),
        n_classes: q.n_classes(),
        n_reference: d.n_reference(),
        e_alpha: e,
        mag,
        pmag,
        scales,
        ph_dim,
    })
}

/// Builds the distance matrix for `spec.metric` and evaluates every
/// requested complexity on it.
pub fn compute_complexities(
    bundle: &TrajectoryBundle,
    spec: &ComputeSpec,
    budget: &MemoryBudget,
) -> Result<ComplexityRecord> {
    let d = distance_matrix_for(bundle, spec, budget)?;
    complexities_from_distances(&d, bundle.run_meta.n_train, spec)
}
