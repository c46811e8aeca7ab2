//! Distance matrices over trajectory points.
//!
//! Three (pseudo)metrics are supported: the Euclidean distance between
//! weight vectors (optionally after a sparse random projection), the
//! data-dependent pseudometric `m^{-1/p} ||L(w) - L(w')||_p` between
//! per-sample loss vectors, and its 0/1-loss special case (normalized
//! Hamming distance).

mod cache;
mod projection;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::matrix::Matrix;
use crate::trajectory::{BinaryLossTrajectory, LossTrajectory};

pub use cache::{read_cache, write_cache, CacheInfo};
pub use projection::{ProjectionSpec, SparseProjection, TargetDim, AUTO_DIM_CONSTANT};

/// Which (pseudo)metric produced a distance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricKind {
    Euclidean,
    RhoP { p: f64 },
    ZeroOne,
}

impl MetricKind {
    /// Short token used in file names and report keys.
    pub fn token(&self) -> String {
        match self {
            MetricKind::Euclidean => "euclid".into(),
            MetricKind::RhoP { p } => format!("rho-p{p}"),
            MetricKind::ZeroOne => "zero-one".into(),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

impl FromStr for MetricKind {
    type Err = TopoError;

    /// Accepts `euclid`, `zero-one`, `rho-p` (p = 1), `rho-p2`, `rho-p:2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "euclid" | "euclidean" => return Ok(MetricKind::Euclidean),
            "zero-one" | "01" => return Ok(MetricKind::ZeroOne),
            "rho-p" => return Ok(MetricKind::RhoP { p: 1.0 }),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("rho-p") {
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            let p: f64 = rest
                .parse()
                .map_err(|_| TopoError::InvalidSpec(format!("bad metric token {s:?}")))?;
            if !(p >= 1.0 && p.is_finite()) {
                return Err(TopoError::InvalidOrder(p));
            }
            return Ok(MetricKind::RhoP { p });
        }
        Err(TopoError::InvalidSpec(format!("unknown metric {s:?}")))
    }
}

impl TryFrom<String> for MetricKind {
    type Error = TopoError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricKind> for String {
    fn from(k: MetricKind) -> String {
        k.token()
    }
}

/// Caps the bytes any single matrix allocation may use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryBudget {
    bytes: Option<u128>,
}

impl MemoryBudget {
    pub const ENV_VAR: &'static str = "TOPO_MEM_BUDGET_MB";

    pub fn unlimited() -> Self {
        MemoryBudget { bytes: None }
    }

    pub fn megabytes(mb: u64) -> Self {
        MemoryBudget {
            bytes: Some(mb as u128 * 1024 * 1024),
        }
    }

    /// Reads `TOPO_MEM_BUDGET_MB`; unset or unparsable means unlimited.
    pub fn from_env() -> Self {
        std::env::var(Self::ENV_VAR)
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map_or_else(Self::unlimited, Self::megabytes)
    }

    pub fn check(&self, required_bytes: u128) -> Result<()> {
        match self.bytes {
            Some(budget) if required_bytes > budget => Err(TopoError::DimensionOverflow {
                required_bytes,
                budget_bytes: budget,
            }),
            _ => Ok(()),
        }
    }

    fn check_square(&self, n: usize) -> Result<()> {
        self.check(n as u128 * n as u128 * 8)
    }
}

/// Symmetric, zero-diagonal, nonnegative N x N matrix of pseudodistances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
    kind: MetricKind,
    n_reference: Option<usize>,
}

impl DistanceMatrix {
    /// Builds the matrix from a pairwise function evaluated on the strict
    /// upper triangle only; the lower triangle is mirrored.
    pub fn from_fn<F>(n: usize, kind: MetricKind, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let mut entries = vec![0.0; n * n];
        if n > 1 {
            entries.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, slot) in row.iter_mut().enumerate().skip(i + 1) {
                    *slot = f(i, j);
                }
            });
            for i in 0..n {
                for j in i + 1..n {
                    entries[j * n + i] = entries[i * n + j];
                }
            }
        }
        DistanceMatrix {
            n,
            entries,
            kind,
            n_reference: None,
        }
    }

    /// Wraps a full row-major matrix after checking symmetry, the zero
    /// diagonal, and that entries are finite and nonnegative.
    pub fn from_entries(n: usize, entries: Vec<f64>, kind: MetricKind) -> Result<Self> {
        if entries.len() != n * n {
            return Err(TopoError::ShapeMismatch(format!(
                "{} entries cannot form a {n}x{n} distance matrix",
                entries.len()
            )));
        }
        let dm = DistanceMatrix {
            n,
            entries,
            kind,
            n_reference: None,
        };
        dm.check_structure()?;
        Ok(dm)
    }

    pub fn from_rows(rows: &[Vec<f64>], kind: MetricKind) -> Result<Self> {
        let n = rows.len();
        let entries = Matrix::from_rows(rows)?.into_vec();
        Self::from_entries(n, entries, kind)
    }

    pub fn with_reference(mut self, n_reference: usize) -> Self {
        self.n_reference = Some(n_reference);
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn n_reference(&self) -> Option<usize> {
        self.n_reference
    }

    pub fn max_distance(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry strictly above `tol`.
    pub fn min_positive_distance(&self, tol: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.n {
            for &d in &self.row(i)[i + 1..] {
                if d > tol && best.is_none_or(|b| d < b) {
                    best = Some(d);
                }
            }
        }
        best
    }

    /// Restriction to the given points, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> DistanceMatrix {
        let k = indices.len();
        let mut entries = Vec::with_capacity(k * k);
        for &a in indices {
            let row = self.row(a);
            entries.extend(indices.iter().map(|&b| row[b]));
        }
        DistanceMatrix {
            n: k,
            entries,
            kind: self.kind,
            n_reference: self.n_reference,
        }
    }

    fn check_structure(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(TopoError::ShapeMismatch(format!(
                    "diagonal entry {i} is nonzero"
                )));
            }
            for j in i + 1..self.n {
                let d = self.get(i, j);
                if !d.is_finite() || d < 0.0 {
                    return Err(TopoError::NonFiniteEntry {
                        what: "distance matrix",
                        row: i,
                        col: j,
                    });
                }
                if d != self.get(j, i) {
                    return Err(TopoError::ShapeMismatch(format!(
                        "distance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest triangle-inequality violation `d(i,k) - d(i,j) - d(j,k)`
    /// over all triples (zero when none is violated). O(N^3).
    pub fn max_triangle_violation(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dij = self.get(i, j);
                for k in 0..n {
                    worst = worst.max(self.get(i, k) - dij - self.get(j, k));
                }
            }
        }
        worst
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise Euclidean distances between the rows of `points`, after an
/// optional sparse random projection.
///
/// Without a projection the trajectory itself (T_pts x D float64) must fit
/// in `budget`, otherwise `DimensionOverflow` is returned.
pub fn euclidean_distance_matrix(
    points: &Matrix<f64>,
    proj: Option<&ProjectionSpec>,
    budget: &MemoryBudget,
) -> Result<DistanceMatrix> {
    if let Some((row, col)) = points.first_non_finite() {
        return Err(TopoError::NonFiniteEntry {
            what: "weights",
            row,
            col,
        });
    }
    let n = points.rows();
    budget.check_square(n)?;
    let projected;
    let points = match proj {
        Some(spec) => {
            let k = spec.resolve_dim(n)?;
            budget.check(n as u128 * k as u128 * 8)?;
            projected = SparseProjection::new(points.cols(), k, spec.seed).project(points);
            &projected
        }
        None => {
            budget.check(n as u128 * points.cols() as u128 * 8)?;
            points
        }
    };
    Ok(DistanceMatrix::from_fn(n, MetricKind::Euclidean, |i, j| {
        squared_euclidean(points.row(i), points.row(j)).sqrt()
    }))
}

fn check_order(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(TopoError::InvalidOrder(p))
    }
}

/// `m^{-1/p} (sum_k |a_k - b_k|^p)^{1/p}`, the normalized l_p distance
/// between two loss vectors of length m.
pub fn rho_p(a: &[f64], b: &[f64], p: f64) -> f64 {
    let m = a.len() as f64;
    if p == 1.0 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / m
    } else if p == 2.0 {
        (squared_euclidean(a, b) / m).sqrt()
    } else {
        (a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powf(p))
            .sum::<f64>()
            / m)
            .powf(1.0 / p)
    }
}

/// Data-dependent pseudometric between recorded per-sample loss vectors.
pub fn loss_pseudometric_matrix(losses: &LossTrajectory, p: f64) -> Result<DistanceMatrix> {
    check_order(p)?;
    let m = &losses.matrix;
    if m.cols() == 0 {
        return Err(TopoError::EmptySelection {
            fraction: losses.subsample_fraction,
            columns: 0,
        });
    }
    if let Some((row, col)) = m.first_non_finite() {
        return Err(TopoError::NonFiniteEntry {
            what: "losses",
            row,
            col,
        });
    }
    Ok(
        DistanceMatrix::from_fn(m.rows(), MetricKind::RhoP { p }, |i, j| {
            rho_p(m.row(i), m.row(j), p)
        })
        .with_reference(m.cols()),
    )
}

/// Normalized Hamming distance between 0/1 loss vectors.
pub fn zero_one_pseudometric_matrix(losses01: &BinaryLossTrajectory) -> Result<DistanceMatrix> {
    let m = &losses01.matrix;
    if m.cols() == 0 {
        return Err(TopoError::EmptySelection {
            fraction: 1.0,
            columns: 0,
        });
    }
    if let Some(k) = m.as_slice().iter().position(|&v| v > 1) {
        return Err(TopoError::InvalidSpec(format!(
            "losses01 entry {k} is {}, not 0 or 1",
            m.as_slice()[k]
        )));
    }
    let cols = m.cols() as f64;
    Ok(
        DistanceMatrix::from_fn(m.rows(), MetricKind::ZeroOne, |i, j| {
            let disagreements = m
                .row(i)
                .iter()
                .zip(m.row(j))
                .filter(|(a, b)| a != b)
                .count();
            disagreements as f64 / cols
        })
        .with_reference(m.cols()),
    )
}

/// Uniformly chooses `round(fraction * m)` of `m` columns without
/// replacement; returned in ascending order.
pub fn sample_columns(m: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TopoError::InvalidSpec(format!(
            "subsample fraction {fraction} outside (0, 1]"
        )));
    }
    let keep = (fraction * m as f64).round() as usize;
    if keep == 0 {
        return Err(TopoError::EmptySelection {
            fraction,
            columns: m,
        });
    }
    if keep >= m {
        return Ok((0..m).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, m, keep).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Keeps a seeded uniform subset of the retained samples.
pub fn subsample_columns(
    losses: &LossTrajectory,
    fraction: f64,
    seed: u64,
) -> Result<LossTrajectory> {
    let cols = sample_columns(losses.matrix.cols(), fraction, seed)?;
    Ok(LossTrajectory {
        matrix: losses.matrix.select_columns(&cols),
        sample_ids: cols.iter().map(|&c| losses.sample_ids[c]).collect(),
        subsample_fraction: losses.subsample_fraction * cols.len() as f64
            / losses.matrix.cols() as f64,
    })
}

/// Same selection rule as [`subsample_columns`] for 0/1 losses; with equal
/// column counts and seed both pick the same columns.
pub fn subsample_binary_columns(
    losses01: &BinaryLossTrajectory,
    fraction: f64,
    seed: u64,
) -> Result<BinaryLossTrajectory> {
    let cols = sample_columns(losses01.matrix.cols(), fraction, seed)?;
    Ok(BinaryLossTrajectory {
        matrix: losses01.matrix.select_columns(&cols),
        sample_ids: cols.iter().map(|&c| losses01.sample_ids[c]).collect(),
        subsample_fraction: losses01.subsample_fraction * cols.len() as f64
            / losses01.matrix.cols() as f64,
    })
}
