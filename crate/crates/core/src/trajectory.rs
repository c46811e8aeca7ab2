//! On-disk trajectory bundles.
//!
//! A bundle is a directory holding `meta.json` plus raw little-endian
//! matrices:
//!
//! ```text
//! run1/
//!   meta.json          run metadata, shapes, iteration index, checksums
//!   weights.f64        T_pts x D   float64, row-major
//!   losses.f64         T_pts x m   float64, row-major
//!   losses01.u8        T_pts x m   uint8 in {0, 1}
//!   risk_history.csv   iteration,train_risk,test_risk
//! ```
//!
//! Shapes live only in `meta.json`; the byte length of every matrix file
//! must match its declaration exactly. Checksums are optional on read but
//! always written.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TopoError};
use crate::matrix::Matrix;

pub const META_FILE: &str = "meta.json";
pub const WEIGHTS_FILE: &str = "weights.f64";
pub const LOSSES_FILE: &str = "losses.f64";
pub const LOSSES01_FILE: &str = "losses01.u8";
pub const RISK_FILE: &str = "risk_history.csv";
pub const FORMAT_TAG: &str = "topo-bundle/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub learning_rate: f64,
    pub batch_size: u64,
    pub optimizer: String,
    pub seed: i64,
    /// Training-set size n.
    pub n_train: u64,
    /// Upper bound B of the loss.
    pub loss_bound: f64,
    pub tau: i64,
    #[serde(rename = "T")]
    pub t_end: i64,
    pub dataset: String,
    pub model: String,
}

/// How the weights were compressed at record time, if at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedProjection {
    pub distortion_eps: f64,
    pub seed: u64,
    pub original_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrajectory {
    /// One parameter vector per recorded iteration.
    pub matrix: Matrix<f64>,
    pub projection: Option<RecordedProjection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTrajectory {
    /// Per-sample surrogate losses, one row per recorded iteration.
    pub matrix: Matrix<f64>,
    pub sample_ids: Vec<u64>,
    /// Fraction of the training set the retained samples represent.
    pub subsample_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLossTrajectory {
    pub matrix: Matrix<u8>,
    pub sample_ids: Vec<u64>,
    /// Fraction of the training set the retained samples represent.
    pub subsample_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub iteration: i64,
    pub train_risk: f64,
    pub test_risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub run_meta: RunMeta,
    /// Iteration of each recorded row, shared by every trajectory.
    pub iteration_index: Vec<i64>,
    pub weights: Option<WeightTrajectory>,
    pub losses: Option<LossTrajectory>,
    pub losses01: Option<BinaryLossTrajectory>,
    pub risk_history: Vec<RiskRecord>,
}

impl TrajectoryBundle {
    /// Number of recorded trajectory points, taken from the first present
    /// trajectory.
    pub fn n_points(&self) -> Option<usize> {
        self.weights
            .as_ref()
            .map(|w| w.matrix.rows())
            .or_else(|| self.losses.as_ref().map(|l| l.matrix.rows()))
            .or_else(|| self.losses01.as_ref().map(|l| l.matrix.rows()))
    }

    pub fn weights(&self) -> Result<&WeightTrajectory> {
        self.weights
            .as_ref()
            .ok_or(TopoError::MissingTrajectory("weights"))
    }

    pub fn losses(&self) -> Result<&LossTrajectory> {
        self.losses
            .as_ref()
            .ok_or(TopoError::MissingTrajectory("losses"))
    }

    pub fn losses01(&self) -> Result<&BinaryLossTrajectory> {
        self.losses01
            .as_ref()
            .ok_or(TopoError::MissingTrajectory("losses01"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NoTrajectory,
    RunMeta,
    PointCount,
    IterationOrder,
    IterationRange,
    RiskOrder,
    RiskRange,
    NonFinite,
    LossRange,
    BinaryRange,
    SampleIds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| v.message.as_str())
            .collect::<Vec<_>>()
            .join("; ")
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{:?}: {}", v.kind, v.message)?;
        }
        Ok(())
    }
}

/// Checks every bundle invariant and lists the violated ones.
pub fn validate_bundle(bundle: &TrajectoryBundle) -> ValidationReport {
    use ViolationKind::*;
    let mut report = ValidationReport::default();
    let meta = &bundle.run_meta;

    if !(meta.learning_rate.is_finite() && meta.learning_rate > 0.0) {
        report.push(
            RunMeta,
            format!("learning_rate {} is not positive", meta.learning_rate),
        );
    }
    if meta.batch_size == 0 {
        report.push(RunMeta, "batch_size is zero");
    }
    if meta.n_train == 0 {
        report.push(RunMeta, "n_train is zero");
    }
    if !(meta.loss_bound.is_finite() && meta.loss_bound > 0.0) {
        report.push(
            RunMeta,
            format!("loss_bound {} is not positive", meta.loss_bound),
        );
    }
    if meta.tau > meta.t_end {
        report.push(
            RunMeta,
            format!("tau {} exceeds T {}", meta.tau, meta.t_end),
        );
    }

    if bundle.weights.is_none() && bundle.losses.is_none() && bundle.losses01.is_none() {
        report.push(
            NoTrajectory,
            "no weights, losses or losses01 trajectory present",
        );
    }

    let n_idx = bundle.iteration_index.len();
    let mut counts = Vec::new();
    if let Some(w) = &bundle.weights {
        counts.push(("weights", w.matrix.rows()));
        if let Some((r, c)) = w.matrix.first_non_finite() {
            report.push(NonFinite, format!("weights[{r}][{c}] is not finite"));
        }
    }
    if let Some(l) = &bundle.losses {
        counts.push(("losses", l.matrix.rows()));
        if l.sample_ids.len() != l.matrix.cols() {
            report.push(
                SampleIds,
                format!(
                    "losses has {} columns but {} sample ids",
                    l.matrix.cols(),
                    l.sample_ids.len()
                ),
            );
        }
        if !(l.subsample_fraction > 0.0 && l.subsample_fraction <= 1.0) {
            report.push(
                SampleIds,
                format!("subsample_fraction {} outside (0, 1]", l.subsample_fraction),
            );
        }
        if let Some((r, c)) = l.matrix.first_non_finite() {
            report.push(NonFinite, format!("losses[{r}][{c}] is not finite"));
        } else if let Some(k) = l
            .matrix
            .as_slice()
            .iter()
            .position(|&v| !(0.0..=meta.loss_bound).contains(&v))
        {
            let cols = l.matrix.cols().max(1);
            report.push(
                LossRange,
                format!(
                    "losses[{}][{}] = {} outside [0, {}]",
                    k / cols,
                    k % cols,
                    l.matrix.as_slice()[k],
                    meta.loss_bound
                ),
            );
        }
    }
    if let Some(b) = &bundle.losses01 {
        counts.push(("losses01", b.matrix.rows()));
        if b.sample_ids.len() != b.matrix.cols() {
            report.push(
                SampleIds,
                format!(
                    "losses01 has {} columns but {} sample ids",
                    b.matrix.cols(),
                    b.sample_ids.len()
                ),
            );
        }
        if !(b.subsample_fraction > 0.0 && b.subsample_fraction <= 1.0) {
            report.push(
                SampleIds,
                format!(
                    "losses01 subsample_fraction {} outside (0, 1]",
                    b.subsample_fraction
                ),
            );
        }
        if let Some(k) = b.matrix.as_slice().iter().position(|&v| v > 1) {
            let cols = b.matrix.cols().max(1);
            report.push(
                BinaryRange,
                format!(
                    "losses01[{}][{}] = {} is not 0 or 1",
                    k / cols,
                    k % cols,
                    b.matrix.as_slice()[k]
                ),
            );
        }
    }
    for (name, rows) in &counts {
        if *rows != n_idx {
            report.push(
                PointCount,
                format!("{name} has {rows} rows but the iteration index has {n_idx} entries"),
            );
        }
    }

    if bundle.iteration_index.windows(2).any(|w| w[0] >= w[1]) {
        report.push(IterationOrder, "iteration index is not strictly increasing");
    }
    if let Some(&i) = bundle
        .iteration_index
        .iter()
        .find(|&&i| i < meta.tau || i > meta.t_end)
    {
        report.push(
            IterationRange,
            format!("iteration {i} outside [{}, {}]", meta.tau, meta.t_end),
        );
    }

    if bundle
        .risk_history
        .windows(2)
        .any(|w| w[0].iteration >= w[1].iteration)
    {
        report.push(
            RiskOrder,
            "risk history iterations are not strictly increasing",
        );
    }
    if let Some(r) = bundle
        .risk_history
        .iter()
        .find(|r| r.iteration < meta.tau || r.iteration > meta.t_end)
    {
        report.push(
            RiskRange,
            format!(
                "risk record at iteration {} outside [{}, {}]",
                r.iteration, meta.tau, meta.t_end
            ),
        );
    }
    if bundle
        .risk_history
        .iter()
        .any(|r| !r.train_risk.is_finite() || !r.test_risk.is_finite())
    {
        report.push(NonFinite, "risk history contains a non-finite risk");
    }

    report
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleMeta {
    format: String,
    run: RunMeta,
    iteration_index: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<WeightsDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    losses: Option<LossesDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    losses01: Option<Losses01Decl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    risk_history: Option<RiskDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDecl {
    #[serde(default = "default_weights_file")]
    file: String,
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projection: Option<RecordedProjection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossesDecl {
    #[serde(default = "default_losses_file")]
    file: String,
    rows: usize,
    cols: usize,
    sample_ids: Vec<u64>,
    #[serde(default = "one")]
    subsample_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Losses01Decl {
    #[serde(default = "default_losses01_file")]
    file: String,
    rows: usize,
    cols: usize,
    sample_ids: Vec<u64>,
    #[serde(default = "one")]
    subsample_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskDecl {
    #[serde(default = "default_risk_file")]
    file: String,
    records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

fn default_weights_file() -> String {
    WEIGHTS_FILE.into()
}
fn default_losses_file() -> String {
    LOSSES_FILE.into()
}
fn default_losses01_file() -> String {
    LOSSES01_FILE.into()
}
fn default_risk_file() -> String {
    RISK_FILE.into()
}
fn one() -> f64 {
    1.0
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    match fs::read(&path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(TopoError::MissingFile(path)),
        Err(e) => Err(e.into()),
    }
}

fn check_sha(name: &str, bytes: &[u8], declared: &Option<String>) -> Result<()> {
    if let Some(declared) = declared {
        let found = sha256_hex(bytes);
        if !found.eq_ignore_ascii_case(declared) {
            return Err(TopoError::ChecksumMismatch {
                file: name.to_string(),
                declared: declared.clone(),
                found,
            });
        }
    }
    Ok(())
}

fn expect_len(name: &str, bytes: &[u8], rows: usize, cols: usize, elem: usize) -> Result<()> {
    let expected = rows as u128 * cols as u128 * elem as u128;
    if bytes.len() as u128 != expected {
        return Err(TopoError::ShapeMismatch(format!(
            "{name}: declared {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    Ok(())
}

fn decode_f64(what: &'static str, bytes: &[u8], rows: usize, cols: usize) -> Result<Matrix<f64>> {
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let m = Matrix::from_vec(rows, cols, data)?;
    if let Some((row, col)) = m.first_non_finite() {
        return Err(TopoError::NonFiniteEntry { what, row, col });
    }
    Ok(m)
}

fn encode_f64(m: &Matrix<f64>) -> Vec<u8> {
    m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_risk_csv(bytes: &[u8]) -> Result<Vec<RiskRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| TopoError::MetadataParse(format!("{RISK_FILE}: {e}")))?
        .clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["iteration", "train_risk", "test_risk"]
    {
        return Err(TopoError::MetadataParse(format!(
            "{RISK_FILE}: header must be iteration,train_risk,test_risk"
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| TopoError::MetadataParse(format!("{RISK_FILE}: {e}"))))
        .collect()
}

fn write_risk_csv(records: &[RiskRecord]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["iteration", "train_risk", "test_risk"])
        .map_err(std::io::Error::other)?;
    for r in records {
        writer
            .write_record([
                r.iteration.to_string(),
                r.train_risk.to_string(),
                r.test_risk.to_string(),
            ])
            .map_err(std::io::Error::other)?;
    }
    writer
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()).into())
}

/// Reads a bundle and checks its structure (files present, byte lengths,
/// checksums, finite reals) without enforcing the semantic invariants.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<TrajectoryBundle> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(TopoError::MissingFile(dir.to_path_buf()));
    }
    let meta_bytes = read_file(dir, META_FILE)?;
    let meta: BundleMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| TopoError::MetadataParse(format!("{META_FILE}: {e}")))?;
    if meta.format != FORMAT_TAG {
        return Err(TopoError::MetadataParse(format!(
            "unsupported bundle format {:?}",
            meta.format
        )));
    }

    let weights = match &meta.weights {
        Some(d) => {
            let bytes = read_file(dir, &d.file)?;
            expect_len(&d.file, &bytes, d.rows, d.cols, 8)?;
            check_sha(&d.file, &bytes, &d.sha256)?;
            Some(WeightTrajectory {
                matrix: decode_f64("weights", &bytes, d.rows, d.cols)?,
                projection: d.projection.clone(),
            })
        }
        None => None,
    };
    let losses = match &meta.losses {
        Some(d) => {
            let bytes = read_file(dir, &d.file)?;
            expect_len(&d.file, &bytes, d.rows, d.cols, 8)?;
            check_sha(&d.file, &bytes, &d.sha256)?;
            if d.sample_ids.len() != d.cols {
                return Err(TopoError::ShapeMismatch(format!(
                    "{}: {} columns but {} sample ids",
                    d.file,
                    d.cols,
                    d.sample_ids.len()
                )));
            }
            Some(LossTrajectory {
                matrix: decode_f64("losses", &bytes, d.rows, d.cols)?,
                sample_ids: d.sample_ids.clone(),
                subsample_fraction: d.subsample_fraction,
            })
        }
        None => None,
    };
    let losses01 = match &meta.losses01 {
        Some(d) => {
            let bytes = read_file(dir, &d.file)?;
            expect_len(&d.file, &bytes, d.rows, d.cols, 1)?;
            check_sha(&d.file, &bytes, &d.sha256)?;
            if d.sample_ids.len() != d.cols {
                return Err(TopoError::ShapeMismatch(format!(
                    "{}: {} columns but {} sample ids",
                    d.file,
                    d.cols,
                    d.sample_ids.len()
                )));
            }
            Some(BinaryLossTrajectory {
                matrix: Matrix::from_vec(d.rows, d.cols, bytes)?,
                sample_ids: d.sample_ids.clone(),
                subsample_fraction: d.subsample_fraction,
            })
        }
        None => None,
    };

    let n_idx = meta.iteration_index.len();
    for (name, rows) in [
        ("weights", meta.weights.as_ref().map(|d| d.rows)),
        ("losses", meta.losses.as_ref().map(|d| d.rows)),
        ("losses01", meta.losses01.as_ref().map(|d| d.rows)),
    ] {
        if let Some(rows) = rows {
            if rows != n_idx {
                return Err(TopoError::ShapeMismatch(format!(
                    "{name} declares {rows} rows, iteration index has {n_idx} entries"
                )));
            }
        }
    }

    let risk_history = match &meta.risk_history {
        Some(d) => {
            let bytes = read_file(dir, &d.file)?;
            check_sha(&d.file, &bytes, &d.sha256)?;
            let records = read_risk_csv(&bytes)?;
            if records.len() != d.records {
                return Err(TopoError::ShapeMismatch(format!(
                    "{}: declared {} records, found {}",
                    d.file,
                    d.records,
                    records.len()
                )));
            }
            records
        }
        None if dir.join(RISK_FILE).is_file() => read_risk_csv(&fs::read(dir.join(RISK_FILE))?)?,
        None => Vec::new(),
    };

    Ok(TrajectoryBundle {
        run_meta: meta.run,
        iteration_index: meta.iteration_index,
        weights,
        losses,
        losses01,
        risk_history,
    })
}

/// Reads a bundle and rejects it unless every invariant holds.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<TrajectoryBundle> {
    let bundle = read_bundle(dir)?;
    let report = validate_bundle(&bundle);
    if report.is_empty() {
        Ok(bundle)
    } else {
        Err(TopoError::InvalidBundle(report))
    }
}

/// Writes `bundle` into `dir` (created if needed). `meta.json` is written
/// last so a partially written directory never looks complete.
pub fn write_bundle(bundle: &TrajectoryBundle, dir: impl AsRef<Path>) -> Result<()> {
    let report = validate_bundle(bundle);
    if !report.is_empty() {
        return Err(TopoError::InvalidBundle(report));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let weights = match &bundle.weights {
        Some(w) => {
            let bytes = encode_f64(&w.matrix);
            fs::write(dir.join(WEIGHTS_FILE), &bytes)?;
            Some(WeightsDecl {
                file: WEIGHTS_FILE.into(),
                rows: w.matrix.rows(),
                cols: w.matrix.cols(),
                sha256: Some(sha256_hex(&bytes)),
                projection: w.projection.clone(),
            })
        }
        None => None,
    };
    let losses = match &bundle.losses {
        Some(l) => {
            let bytes = encode_f64(&l.matrix);
            fs::write(dir.join(LOSSES_FILE), &bytes)?;
            Some(LossesDecl {
                file: LOSSES_FILE.into(),
                rows: l.matrix.rows(),
                cols: l.matrix.cols(),
                sample_ids: l.sample_ids.clone(),
                subsample_fraction: l.subsample_fraction,
                sha256: Some(sha256_hex(&bytes)),
            })
        }
        None => None,
    };
    let losses01 = match &bundle.losses01 {
        Some(b) => {
            let bytes = b.matrix.as_slice();
            fs::write(dir.join(LOSSES01_FILE), bytes)?;
            Some(Losses01Decl {
                file: LOSSES01_FILE.into(),
                rows: b.matrix.rows(),
                cols: b.matrix.cols(),
                sample_ids: b.sample_ids.clone(),
                subsample_fraction: b.subsample_fraction,
                sha256: Some(sha256_hex(bytes)),
            })
        }
        None => None,
    };
    let risk_history = if bundle.risk_history.is_empty() {
        None
    } else {
        let bytes = write_risk_csv(&bundle.risk_history)?;
        fs::write(dir.join(RISK_FILE), &bytes)?;
        Some(RiskDecl {
            file: RISK_FILE.into(),
            records: bundle.risk_history.len(),
            sha256: Some(sha256_hex(&bytes)),
        })
    };

    let meta = BundleMeta {
        format: FORMAT_TAG.into(),
        run: bundle.run_meta.clone(),
        iteration_index: bundle.iteration_index.clone(),
        weights,
        losses,
        losses01,
        risk_history,
    };
    let json =
        serde_json::to_vec_pretty(&meta).map_err(|e| TopoError::MetadataParse(e.to_string()))?;
    fs::write(dir.join(META_FILE), json)?;
    Ok(())
}
