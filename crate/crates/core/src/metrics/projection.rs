//! Sparse random projection for Euclidean trajectories.
//!
//! Entries of the D x k projection are `+-1/sqrt(density * k)` with
//! probability `density / 2` each and zero otherwise, `density = 1/sqrt(D)`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::matrix::Matrix;

/// Constant `c` of the automatic target dimension `ceil(c ln N / eps^2)`.
pub const AUTO_DIM_CONSTANT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetDim {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl TargetDim {
    pub const AUTO: TargetDim = TargetDim::Auto(AutoTag::Auto);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub distortion_eps: f64,
    pub seed: u64,
    pub target_dim: TargetDim,
}

impl ProjectionSpec {
    pub fn auto(distortion_eps: f64, seed: u64) -> Self {
        ProjectionSpec {
            distortion_eps,
            seed,
            target_dim: TargetDim::AUTO,
        }
    }

    /// Output dimension for a set of `n_points` points.
    pub fn resolve_dim(&self, n_points: usize) -> Result<usize> {
        if !(self.distortion_eps > 0.0 && self.distortion_eps < 1.0) {
            return Err(TopoError::InvalidSpec(format!(
                "distortion eps {} outside (0, 1)",
                self.distortion_eps
            )));
        }
        match self.target_dim {
            TargetDim::Fixed(0) => Err(TopoError::InvalidSpec(
                "projection dimension is zero".into(),
            )),
            TargetDim::Fixed(k) => Ok(k),
            TargetDim::Auto(_) => {
                let n = n_points.max(2) as f64;
                let k = (AUTO_DIM_CONSTANT * n.ln() / (self.distortion_eps * self.distortion_eps))
                    .ceil();
                Ok(k as usize)
            }
        }
    }
}

/// Column-compressed sparse projection: for every input coordinate, the
/// output coordinates it feeds and the signed value.
#[derive(Debug, Clone)]
pub struct SparseProjection {
    input_dim: usize,
    output_dim: usize,
    columns: Vec<Vec<(u32, f64)>>,
}

impl SparseProjection {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let density = (1.0 / (input_dim.max(1) as f64).sqrt()).min(1.0);
        let value = 1.0 / (density * output_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nnz = Binomial::new(output_dim as u64, density).expect("density in [0, 1]");
        let columns = (0..input_dim)
            .map(|_| {
                let count = nnz.sample(&mut rng) as usize;
                index::sample(&mut rng, output_dim, count)
                    .into_iter()
                    .map(|t| {
                        let sign = if rng.random::<bool>() { value } else { -value };
                        (t as u32, sign)
                    })
                    .collect()
            })
            .collect();
        SparseProjection {
            input_dim,
            output_dim,
            columns,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Projects every row of `points` (which must have `input_dim` columns).
    pub fn project(&self, points: &Matrix<f64>) -> Matrix<f64> {
        assert_eq!(points.cols(), self.input_dim, "projection input dimension");
        let k = self.output_dim;
        let mut out = vec![0.0; points.rows() * k];
        out.par_chunks_mut(k.max(1))
            .enumerate()
            .for_each(|(i, dst)| {
                for (x, col) in points.row(i).iter().zip(&self.columns) {
                    if *x == 0.0 {
                        continue;
                    }
                    for &(t, v) in col {
                        dst[t as usize] += x * v;
                    }
                }
            });
        Matrix::from_vec(points.rows(), k, out).expect("shape by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{euclidean_distance_matrix, MemoryBudget};
    use rand_distr::StandardNormal;

    #[test]
    fn auto_dim_formula() {
        let spec = ProjectionSpec::auto(0.05, 1);
        let expected = (8.0 * (200f64).ln() / 0.0025).ceil() as usize;
        assert_eq!(spec.resolve_dim(200).unwrap(), expected);
        assert_eq!(expected, 16955);
        let bad = ProjectionSpec::auto(1.2, 1);
        assert!(bad.resolve_dim(10).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = SparseProjection::new(400, 50, 3);
        let b = SparseProjection::new(400, 50, 3);
        assert_eq!(a.columns, b.columns);
        let expected = 400.0 * 50.0 / 20.0;
        assert!((a.nnz() as f64 - expected).abs() < 0.25 * expected);
    }

    #[test]
    fn explicit_reduction_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, d) = (60, 3000);
        let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let pts = Matrix::from_vec(n, d, data).unwrap();
        let exact = euclidean_distance_matrix(&pts, None, &MemoryBudget::unlimited()).unwrap();
        let spec = ProjectionSpec {
            distortion_eps: 0.1,
            seed: 4,
            target_dim: TargetDim::Fixed(1500),
        };
        let approx =
            euclidean_distance_matrix(&pts, Some(&spec), &MemoryBudget::unlimited()).unwrap();
        let mut within = 0;
        let mut total = 0;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if ((approx.get(i, j) - exact.get(i, j)) / exact.get(i, j)).abs() <= 0.1 {
                    within += 1;
                }
            }
        }
        assert!(within as f64 >= 0.99 * total as f64, "{within}/{total}");
    }

    #[test]
    fn target_dim_serde() {
        let auto = ProjectionSpec::auto(0.05, 2);
        let json = serde_json::to_string(&auto).unwrap();
        assert!(json.contains("\"auto\""));
        assert_eq!(serde_json::from_str::<ProjectionSpec>(&json).unwrap(), auto);
        let fixed: ProjectionSpec =
            serde_json::from_str(r#"{"distortion_eps":0.1,"seed":1,"target_dim":64}"#).unwrap();
        assert_eq!(fixed.target_dim, TargetDim::Fixed(64));
    }
}
