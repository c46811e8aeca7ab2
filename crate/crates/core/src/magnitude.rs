//! Weightings, magnitude and positive magnitude of finite pseudometric
//! spaces.
//!
//! A weighting of `(X, s·d)` solves `M beta = 1` with similarity matrix
//! `M(a, b) = exp(-s d(a, b))`. For pseudometric inputs the system is
//! solved on the metric identification `X/~` (points at distance zero
//! merged), where `M` is positive definite for every supported metric
//! kind; the canonical weighting on `X` spreads each class weight evenly
//! over its members.
//!
//! `Mag = sum beta`, `PMag = sum max(beta, 0)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::metrics::DistanceMatrix;
use crate::unionfind::DisjointSets;
use crate::IDENTIFICATION_TOL;

/// `s * (min positive distance)` below this sets the conditioning flag.
pub const CONDITIONING_THRESHOLD: f64 = 1e-6;

/// Rows above which the similarity matvec runs in parallel.
const PAR_MATVEC_ROWS: usize = 256;

/// Metric identification of a finite pseudometric space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientSpace {
    /// Class id of every original point.
    pub class_of: Vec<usize>,
    pub class_sizes: Vec<usize>,
    /// Original index of the first member of each class.
    pub representatives: Vec<usize>,
    pub distances: DistanceMatrix,
}

impl QuotientSpace {
    pub fn n_points(&self) -> usize {
        self.class_of.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_sizes.len()
    }
}

/// Merges points within pseudodistance `tol` (transitively, by
/// union-find). Classes are numbered by first occurrence and distances
/// between classes are taken from their representatives.
pub fn metric_identification(d: &DistanceMatrix, tol: f64) -> QuotientSpace {
    let n = d.len();
    let mut sets = DisjointSets::new(n);
    for i in 0..n {
        for (j, &dij) in d.row(i).iter().enumerate().skip(i + 1) {
            if dij <= tol {
                sets.union(i, j);
            }
        }
    }
    let mut root_class = vec![usize::MAX; n];
    let mut class_of = Vec::with_capacity(n);
    let mut class_sizes = Vec::new();
    let mut representatives = Vec::new();
    for i in 0..n {
        let root = sets.find(i);
        if root_class[root] == usize::MAX {
            root_class[root] = class_sizes.len();
            class_sizes.push(0);
            representatives.push(i);
        }
        let c = root_class[root];
        class_sizes[c] += 1;
        class_of.push(c);
    }
    let distances = if representatives.len() == n {
        d.clone()
    } else {
        d.submatrix(&representatives)
    };
    QuotientSpace {
        class_of,
        class_sizes,
        representatives,
        distances,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Dense below `dense_cutoff`, otherwise conjugate gradient with dense
    /// fallback on non-convergence.
    Auto,
    Krylov,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Bound on `||M beta - 1||_inf`.
    pub tolerance: f64,
    /// CG iteration cap; `None` means `10 * N'`.
    pub max_iter: Option<usize>,
    pub dense_cutoff: usize,
    pub method: SolverMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-8,
            max_iter: None,
            dense_cutoff: 512,
            method: SolverMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    KrylovCg,
    DenseDirect,
}

/// Weighting of the metric identification at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingVector {
    /// One weight per quotient class.
    pub beta: Vec<f64>,
    pub scale: f64,
    /// Achieved `||M beta - 1||_inf`.
    pub residual: f64,
    pub solver: SolverKind,
    pub iterations: usize,
}

impl WeightingVector {
    pub fn magnitude(&self) -> f64 {
        self.beta.iter().sum()
    }

    pub fn positive_magnitude(&self) -> f64 {
        self.beta.iter().map(|b| b.max(0.0)).sum()
    }

    /// Canonical weighting of the original points: each class weight split
    /// equally among the class members.
    pub fn canonical(&self, q: &QuotientSpace) -> Vec<f64> {
        q.class_of
            .iter()
            .map(|&c| self.beta[c] / q.class_sizes[c] as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeResult {
    pub scale: f64,
    pub mag: f64,
    pub pmag: f64,
    pub residual: f64,
    pub solver: SolverKind,
    pub conditioning_flag: bool,
}

/// Row-major `exp(-s d)` over the quotient, with an exact unit diagonal.
fn similarity_matrix(d: &DistanceMatrix, s: f64) -> Vec<f64> {
    let n = d.len();
    let mut m = vec![0.0; n * n];
    m.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, (slot, &dij)) in row.iter_mut().zip(d.row(i)).enumerate() {
            *slot = if i == j { 1.0 } else { (-s * dij).exp() };
        }
    });
    m
}

fn matvec(m: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    if n >= PAR_MATVEC_ROWS {
        out.par_iter_mut()
            .zip(m.par_chunks(n))
            .for_each(|(o, row)| *o = dot(row));
    } else {
        for (o, row) in out.iter_mut().zip(m.chunks(n)) {
            *o = dot(row);
        }
    }
}

fn residual_inf(m: &[f64], n: usize, beta: &[f64]) -> f64 {
    let mut mb = vec![0.0; n];
    matvec(m, n, beta, &mut mb);
    mb.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
}

/// Preconditioned conjugate gradient on `M beta = 1` with a Jacobi
/// preconditioner. Returns `(beta, true residual, iterations)`.
fn conjugate_gradient(m: &[f64], n: usize, tol: f64, max_iter: usize) -> (Vec<f64>, f64, usize) {
    let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / m[i * n + i]).collect();
    let mut x = vec![0.0; n];
    let mut r = vec![1.0; n];
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut mp = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut iterations = 0;

    while iterations < max_iter {
        matvec(m, n, &p, &mut mp);
        let pmp: f64 = p.iter().zip(&mp).map(|(a, b)| a * b).sum();
        if !(pmp > 0.0) {
            break;
        }
        let step = rz / pmp;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * mp[i];
        }
        iterations += 1;

        let r_inf = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if r_inf <= 0.5 * tol {
            // the recursive residual drifts; confirm against the true one
            let true_res = residual_inf(m, n, &x);
            if true_res <= tol {
                return (x, true_res, iterations);
            }
            matvec(m, n, &x, &mut mp);
            for i in 0..n {
                r[i] = 1.0 - mp[i];
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            continue;
        }

        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = residual_inf(m, n, &x);
    (x, res, iterations)
}

/// Cholesky (LU if Cholesky breaks down) followed by a few steps of
/// iterative refinement.
fn dense_solve(m: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mat = DMatrix::from_row_slice(n, n, m);
    let ones = DVector::from_element(n, 1.0);
    let solve: Box<dyn Fn(&DVector<f64>) -> Option<DVector<f64>>> = match mat.clone().cholesky() {
        Some(ch) => Box::new(move |b| Some(ch.solve(b))),
        None => {
            let lu = mat.clone().lu();
            Box::new(move |b| lu.solve(b))
        }
    };
    let Some(mut x) = solve(&ones) else {
        return (vec![f64::NAN; n], f64::INFINITY);
    };
    let mut res = residual_inf(m, n, x.as_slice());
    for _ in 0..3 {
        if !res.is_finite() || res == 0.0 {
            break;
        }
        let r = &ones - &mat * &x;
        let Some(dx) = solve(&r) else { break };
        let candidate = &x + dx;
        let cand_res = residual_inf(m, n, candidate.as_slice());
        if cand_res < res {
            x = candidate;
            res = cand_res;
        } else {
            break;
        }
    }
    (x.as_slice().to_vec(), res)
}

fn check_scale(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(TopoError::NonPositiveScale(s))
    }
}

/// Weighting of `(X/~, s·d)`.
pub fn solve_weighting(q: &QuotientSpace, s: f64, cfg: &SolverConfig) -> Result<WeightingVector> {
    check_scale(s)?;
    let n = q.n_classes();
    if n <= 1 {
        return Ok(WeightingVector {
            beta: vec![1.0; n],
            scale: s,
            residual: 0.0,
            solver: SolverKind::DenseDirect,
            iterations: 0,
        });
    }
    let m = similarity_matrix(&q.distances, s);
    let use_dense_first = match cfg.method {
        SolverMethod::Dense => true,
        SolverMethod::Krylov => false,
        SolverMethod::Auto => n <= cfg.dense_cutoff,
    };

    let mut best_residual = f64::INFINITY;
    if !use_dense_first {
        let max_iter = cfg.max_iter.unwrap_or(10 * n);
        let (beta, residual, iterations) = conjugate_gradient(&m, n, cfg.tolerance, max_iter);
        if residual <= cfg.tolerance && beta.iter().all(|b| b.is_finite()) {
            return Ok(WeightingVector {
                beta,
                scale: s,
                residual,
                solver: SolverKind::KrylovCg,
                iterations,
            });
        }
        best_residual = residual;
        if cfg.method == SolverMethod::Krylov {
            return Err(TopoError::SolverDiverged {
                residual,
                tolerance: cfg.tolerance,
            });
        }
    }

    let (beta, residual) = dense_solve(&m, n);
    if residual <= cfg.tolerance && beta.iter().all(|b| b.is_finite()) {
        Ok(WeightingVector {
            beta,
            scale: s,
            residual,
            solver: SolverKind::DenseDirect,
            iterations: 0,
        })
    } else {
        Err(TopoError::SolverDiverged {
            residual: residual.min(best_residual),
            tolerance: cfg.tolerance,
        })
    }
}

pub fn magnitude(q: &QuotientSpace, s: f64, cfg: &SolverConfig) -> Result<f64> {
    Ok(solve_weighting(q, s, cfg)?.magnitude())
}

pub fn positive_magnitude(q: &QuotientSpace, s: f64, cfg: &SolverConfig) -> Result<f64> {
    Ok(solve_weighting(q, s, cfg)?.positive_magnitude())
}

/// Both magnitudes from a single weighting solve.
pub fn magnitude_at_scale(
    q: &QuotientSpace,
    s: f64,
    cfg: &SolverConfig,
) -> Result<MagnitudeResult> {
    let w = solve_weighting(q, s, cfg)?;
    let conditioning_flag = q
        .distances
        .min_positive_distance(0.0)
        .is_some_and(|dmin| s * dmin < CONDITIONING_THRESHOLD);
    Ok(MagnitudeResult {
        scale: s,
        mag: w.magnitude(),
        pmag: w.positive_magnitude(),
        residual: w.residual,
        solver: w.solver,
        conditioning_flag,
    })
}

/// Identification at the default tolerance followed by
/// [`magnitude_at_scale`].
pub fn magnitude_of(d: &DistanceMatrix, s: f64, cfg: &SolverConfig) -> Result<MagnitudeResult> {
    magnitude_at_scale(&metric_identification(d, IDENTIFICATION_TOL), s, cfg)
}
