//! PH-dimension estimate from the growth of `E_1` over random subsets.
//!
//! For points sampled from a set of box dimension `d`, `E_1(n points)`
//! grows like `n^{(d-1)/d}`. Fitting `log E_1 = slope * log n + c` gives
//! `d = 1 / (1 - slope)`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mst::prim_lengths;
use crate::error::{Result, TopoError};
use crate::metrics::DistanceMatrix;

/// Slopes at or above `1 - DEGENERATE_MARGIN` are rejected.
const DEGENERATE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimProtocol {
    pub min_size: usize,
    /// Subset-size increment; `None` means `(N - min_size) / 8`.
    #[serde(default)]
    pub step: Option<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for DimProtocol {
    fn default() -> Self {
        DimProtocol {
            min_size: 1000,
            step: None,
            repeats: 5,
            seed: 0,
        }
    }
}

impl DimProtocol {
    /// Default protocol, with `min_size` lowered to `N / 2` when the
    /// trajectory has fewer than 2000 points.
    pub fn for_points(n: usize, seed: u64) -> Self {
        DimProtocol {
            min_size: 1000.min(n / 2).max(1),
            seed,
            ..Default::default()
        }
    }

    fn sample_sizes(&self, n: usize) -> Result<Vec<usize>> {
        if self.min_size < 2 || n < 2 * self.min_size {
            return Err(TopoError::InvalidSpec(format!(
                "dimension fit needs min_size >= 2 and N >= 2 * min_size (N = {n}, min_size = {})",
                self.min_size
            )));
        }
        if self.repeats == 0 {
            return Err(TopoError::InvalidSpec(
                "dimension fit needs repeats >= 1".into(),
            ));
        }
        let step = self.step.unwrap_or((n - self.min_size) / 8).max(1);
        Ok((self.min_size..=n).step_by(step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhDimEstimate {
    /// `1 / (1 - slope)`; `+inf` (serialized as null) for degenerate fits.
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub dim: f64,
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub slope: f64,
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub intercept: f64,
    pub sample_sizes: Vec<usize>,
    /// `log` of the median `E_1` at each sample size.
    #[serde(with = "crate::serde_util::nullable_f64_vec")]
    pub log_e1_values: Vec<f64>,
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub r_squared: f64,
    pub degenerate: bool,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Runs the fit and reports degenerate slopes through the `degenerate`
/// flag instead of an error.
pub fn estimate_ph_dim_flagged(
    d: &DistanceMatrix,
    protocol: &DimProtocol,
) -> Result<PhDimEstimate> {
    let n = d.len();
    let sizes = protocol.sample_sizes(n)?;
    let repeats = protocol.repeats;

    let jobs: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|j| (0..repeats).map(move |r| (j, r)))
        .collect();
    let e1: Vec<f64> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            rng.set_stream((j * repeats + r) as u64);
            let subset = index::sample(&mut rng, n, sizes[j]).into_vec();
            prim_lengths(subset.len(), |a, b| d.get(subset[a], subset[b]))
                .iter()
                .sum::<f64>()
        })
        .collect();

    let medians: Vec<f64> = e1
        .chunks(repeats)
        .map(|c| median(&mut c.to_vec()))
        .collect();
    let log_n: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let log_e1: Vec<f64> = medians.iter().map(|m| m.ln()).collect();

    if log_e1.iter().any(|v| !v.is_finite()) {
        return Ok(PhDimEstimate {
            dim: f64::INFINITY,
            slope: f64::NAN,
            intercept: f64::NAN,
            sample_sizes: sizes,
            log_e1_values: log_e1,
            r_squared: f64::NAN,
            degenerate: true,
        });
    }
    let (slope, intercept, r_squared) = least_squares(&log_n, &log_e1);
    let degenerate = !(slope < 1.0 - DEGENERATE_MARGIN);
    Ok(PhDimEstimate {
        dim: if degenerate {
            f64::INFINITY
        } else {
            1.0 / (1.0 - slope)
        },
        slope,
        intercept,
        sample_sizes: sizes,
        log_e1_values: log_e1,
        r_squared,
        degenerate,
    })
}

/// PH-dimension estimate; degenerate fits (vanishing `E_1` or slope at or
/// above 1) are errors.
pub fn estimate_ph_dim(d: &DistanceMatrix, protocol: &DimProtocol) -> Result<PhDimEstimate> {
    let est = estimate_ph_dim_flagged(d, protocol)?;
    if est.degenerate {
        Err(TopoError::DegenerateFit { slope: est.slope })
    } else {
        Ok(est)
    }
}
