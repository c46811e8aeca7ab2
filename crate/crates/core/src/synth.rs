//! Synthetic point clouds and trajectory bundles with known ground truth,
//! plus the exhaustive/greedy oracles used to check the fast paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::matrix::Matrix;
use crate::metrics::DistanceMatrix;
use crate::trajectory::{
    BinaryLossTrajectory, LossTrajectory, RiskRecord, RunMeta, TrajectoryBundle, WeightTrajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Uniform in `[0, 1]^dim`.
    Cube { dim: usize },
    /// Uniform on the unit sphere `S^{dim-1}` embedded in `R^dim`.
    SphereSurface { dim: usize },
    /// Uniform on the unit circle in the plane.
    Circle,
    /// Standard normal in `R^dim`.
    Gaussian { dim: usize },
    /// Two planar discs of diameter 1 whose centres are `sep` apart.
    TwoCluster { sep: f64 },
    /// Every point of `base` repeated `copies` times (block-wise).
    Duplicated { base: Box<Shape>, copies: usize },
}

impl Shape {
    /// Intrinsic dimension of the sampling support, when meaningful.
    pub fn ground_truth_dim(&self) -> Option<f64> {
        match self {
            Shape::Cube { dim } => Some(*dim as f64),
            Shape::SphereSurface { dim } => Some(*dim as f64 - 1.0),
            Shape::Circle => Some(1.0),
            Shape::Gaussian { dim } => Some(*dim as f64),
            Shape::TwoCluster { .. } => Some(2.0),
            Shape::Duplicated { base, .. } => base.ground_truth_dim(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Shape::Cube { dim } | Shape::SphereSurface { dim } | Shape::Gaussian { dim } => *dim,
            Shape::Circle | Shape::TwoCluster { .. } => 2,
            Shape::Duplicated { base, .. } => base.ambient_dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Shape::Cube { dim } | Shape::SphereSurface { dim } | Shape::Gaussian { dim }
                if *dim == 0 =>
            {
                Err(TopoError::InvalidSpec(
                    "shape dimension must be >= 1".into(),
                ))
            }
            Shape::TwoCluster { sep } if !(sep.is_finite() && *sep >= 0.0) => Err(
                TopoError::InvalidSpec(format!("cluster separation {sep} is invalid")),
            ),
            Shape::Duplicated { copies: 0, .. } => {
                Err(TopoError::InvalidSpec("copies must be >= 1".into()))
            }
            Shape::Duplicated { base, .. } => base.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: Shape,
    /// Points drawn from the shape (before duplication).
    pub n_points: usize,
    pub seed: u64,
    /// Standard deviation of isotropic Gaussian noise added to every point.
    #[serde(default)]
    pub noise: f64,
}

fn draw(shape: &Shape, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match shape {
        Shape::Cube { dim } => (0..n)
            .map(|_| (0..*dim).map(|_| rng.random::<f64>()).collect())
            .collect(),
        Shape::Gaussian { dim } => (0..n)
            .map(|_| {
                (0..*dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect(),
        Shape::SphereSurface { dim } => (0..n)
            .map(|_| loop {
                let v: Vec<f64> = (0..*dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            })
            .collect(),
        Shape::Circle => (0..n)
            .map(|_| {
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        Shape::TwoCluster { sep } => (0..n)
            .map(|i| {
                let r = 0.5 * rng.random::<f64>().sqrt();
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                let cx = if i % 2 == 0 { 0.0 } else { *sep };
                vec![cx + r * t.cos(), r * t.sin()]
            })
            .collect(),
        Shape::Duplicated { base, .. } => draw(base, n, rng),
    }
}

/// Draws the cloud described by `spec`, one point per row. Identical specs
/// give identical bytes.
pub fn sample_points(spec: &SynthSpec) -> Result<WeightTrajectory> {
    if spec.n_points == 0 {
        return Err(TopoError::InvalidSpec("n_points must be >= 1".into()));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(TopoError::InvalidSpec(format!(
            "noise {} is invalid",
            spec.noise
        )));
    }
    spec.shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = draw(&spec.shape, spec.n_points, &mut rng);
    if spec.noise > 0.0 {
        for row in &mut rows {
            for x in row.iter_mut() {
                *x += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    if let Shape::Duplicated { copies, .. } = spec.shape {
        let base = rows.clone();
        for _ in 1..copies {
            rows.extend(base.iter().cloned());
        }
    }
    Ok(WeightTrajectory {
        matrix: Matrix::from_rows(&rows)?,
        projection: None,
    })
}

fn synthetic_meta(n_points: usize, seed: u64, dataset: String) -> RunMeta {
    RunMeta {
        learning_rate: 1.0,
        batch_size: 1,
        optimizer: "none".into(),
        seed: seed as i64,
        n_train: n_points as u64,
        loss_bound: 1.0,
        tau: 0,
        t_end: n_points as i64 - 1,
        dataset,
        model: "synthetic".into(),
    }
}

fn shape_label(shape: &Shape) -> String {
    match shape {
        Shape::Cube { dim } => format!("cube{dim}"),
        Shape::SphereSurface { dim } => format!("sphere{dim}"),
        Shape::Circle => "circle".into(),
        Shape::Gaussian { dim } => format!("gaussian{dim}"),
        Shape::TwoCluster { sep } => format!("two_cluster{sep}"),
        Shape::Duplicated { base, copies } => format!("{}x{copies}", shape_label(base)),
    }
}

/// Weight-only bundle whose "iterates" are the sampled points.
pub fn synth_bundle(spec: &SynthSpec) -> Result<TrajectoryBundle> {
    let weights = sample_points(spec)?;
    let n = weights.matrix.rows();
    Ok(TrajectoryBundle {
        run_meta: synthetic_meta(n, spec.seed, format!("synth:{}", shape_label(&spec.shape))),
        iteration_index: (0..n as i64).collect(),
        weights: Some(weights),
        losses: None,
        losses01: None,
        risk_history: Vec::new(),
    })
}

/// Smooth synthetic loss trajectory: iterates follow a Gaussian random
/// walk in `R^latent_dim`, and sample k has loss
/// `sigmoid(a_k . w + b_k)` with fixed random `(a_k, b_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSynthSpec {
    pub n_points: usize,
    pub n_samples: usize,
    pub latent_dim: usize,
    /// Standard deviation of each random-walk increment.
    pub step: f64,
    pub seed: u64,
}

impl Default for LossSynthSpec {
    fn default() -> Self {
        LossSynthSpec {
            n_points: 200,
            n_samples: 1000,
            latent_dim: 5,
            step: 0.05,
            seed: 0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bundle with weights (the latent walk), surrogate losses, 0/1 losses
/// (`1[a_k . w + b_k > 0]`) and a risk history every `risk_period` points.
pub fn synth_loss_bundle(spec: &LossSynthSpec, risk_period: usize) -> Result<TrajectoryBundle> {
    if spec.n_points == 0 || spec.n_samples == 0 || spec.latent_dim == 0 {
        return Err(TopoError::InvalidSpec(
            "loss synth sizes must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.latent_dim;
    let a: Vec<Vec<f64>> = (0..spec.n_samples)
        .map(|_| {
            (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..spec.n_samples)
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut w = vec![0.0; dim];
    let mut weights = Vec::with_capacity(spec.n_points);
    let mut losses = Vec::with_capacity(spec.n_points);
    let mut losses01 = Vec::with_capacity(spec.n_points);
    for _ in 0..spec.n_points {
        for x in w.iter_mut() {
            *x += spec.step * rng.sample::<f64, _>(StandardNormal);
        }
        let margins: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(ak, bk)| ak.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() + bk)
            .collect();
        losses.push(margins.iter().map(|&z| sigmoid(z)).collect::<Vec<_>>());
        losses01.push(
            margins
                .iter()
                .map(|&z| u8::from(z > 0.0))
                .collect::<Vec<_>>(),
        );
        weights.push(w.clone());
    }
    let period = risk_period.max(1);
    let risk_history = (0..spec.n_points)
        .step_by(period)
        .map(|i| {
            let train = losses[i].iter().sum::<f64>() / spec.n_samples as f64;
            RiskRecord {
                iteration: i as i64,
                train_risk: train,
                test_risk: train + 0.05,
            }
        })
        .collect();
    let sample_ids: Vec<u64> = (0..spec.n_samples as u64).collect();
    let mut meta = synthetic_meta(spec.n_points, spec.seed, "synth:sigmoid-losses".into());
    meta.n_train = spec.n_samples as u64;
    Ok(TrajectoryBundle {
        run_meta: meta,
        iteration_index: (0..spec.n_points as i64).collect(),
        weights: Some(WeightTrajectory {
            matrix: Matrix::from_rows(&weights)?,
            projection: None,
        }),
        losses: Some(LossTrajectory {
            matrix: Matrix::from_rows(&losses)?,
            sample_ids: sample_ids.clone(),
            subsample_fraction: 1.0,
        }),
        losses01: Some(BinaryLossTrajectory {
            matrix: Matrix::from_rows(&losses01)?,
            sample_ids,
            subsample_fraction: 1.0,
        }),
        risk_history,
    })
}

/// Largest instance accepted by [`brute_force_mst_cost`].
pub const BRUTE_FORCE_MST_MAX: usize = 7;

/// Exact MST cost by enumerating all `N^(N-2)` labelled spanning trees
/// through their Prüfer sequences.
pub fn brute_force_mst_cost(d: &DistanceMatrix) -> Result<f64> {
    let n = d.len();
    if n > BRUTE_FORCE_MST_MAX {
        return Err(TopoError::TooLarge {
            size: n,
            max: BRUTE_FORCE_MST_MAX,
        });
    }
    if n < 2 {
        return Ok(0.0);
    }
    if n == 2 {
        return Ok(d.get(0, 1));
    }
    let len = n - 2;
    let total = n.pow(len as u32);
    let mut best = f64::INFINITY;
    let mut seq = vec![0usize; len];
    let mut degree = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for s in seq.iter_mut() {
            *s = c % n;
            c /= n;
        }
        degree.iter_mut().for_each(|x| *x = 1);
        for &s in &seq {
            degree[s] += 1;
        }
        let mut cost = 0.0;
        for &s in &seq {
            let leaf = (0..n)
                .find(|&v| degree[v] == 1)
                .expect("a leaf always exists");
            cost += d.get(leaf, s);
            degree[leaf] = 0;
            degree[s] -= 1;
        }
        let mut last = (0..n).filter(|&v| degree[v] == 1);
        let (u, v) = (
            last.next().expect("two vertices left"),
            last.next().expect("two vertices left"),
        );
        cost += d.get(u, v);
        best = best.min(cost);
    }
    Ok(best)
}

/// Size of a maximal family of pairwise disjoint closed `delta`-balls
/// (balls taken as subsets of the point set), chosen greedily in index
/// order.
pub fn greedy_packing_number(d: &DistanceMatrix, delta: f64) -> usize {
    greedy_packing_centers(d, delta).len()
}

pub fn greedy_packing_centers(d: &DistanceMatrix, delta: f64) -> Vec<usize> {
    let n = d.len();
    let mut centers: Vec<usize> = Vec::new();
    for x in 0..n {
        let disjoint = centers
            .iter()
            .all(|&c| (0..n).all(|y| !(d.get(x, y) <= delta && d.get(c, y) <= delta)));
        if disjoint {
            centers.push(x);
        }
    }
    centers
}

/// Greedy set cover by closed `delta`-balls centred at points of the set:
/// repeatedly take the ball covering the most uncovered points (lowest
/// index on ties). An upper bound on the covering number.
pub fn greedy_covering_number(d: &DistanceMatrix, delta: f64) -> usize {
    let n = d.len();
    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut count = 0;
    while remaining > 0 {
        let (center, _) = (0..n)
            .map(|c| {
                (
                    c,
                    (0..n)
                        .filter(|&y| !covered[y] && d.get(c, y) <= delta)
                        .count(),
                )
            })
            .fold(
                (usize::MAX, 0),
                |best, cand| if cand.1 > best.1 { cand } else { best },
            );
        for y in 0..n {
            if !covered[y] && d.get(center, y) <= delta {
                covered[y] = true;
                remaining -= 1;
            }
        }
        count += 1;
    }
    count
}

/// Largest instance accepted by [`exact_covering_number`].
pub const EXACT_COVERING_MAX: usize = 20;

/// Minimum number of closed `delta`-balls centred at points of the set
/// that cover it, by exhaustive search over centre subsets of growing size.
pub fn exact_covering_number(d: &DistanceMatrix, delta: f64) -> Result<usize> {
    let n = d.len();
    if n > EXACT_COVERING_MAX {
        return Err(TopoError::TooLarge {
            size: n,
            max: EXACT_COVERING_MAX,
        });
    }
    if n == 0 {
        return Ok(0);
    }
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let balls: Vec<u32> = (0..n)
        .map(|c| {
            (0..n)
                .filter(|&y| d.get(c, y) <= delta)
                .fold(0u32, |m, y| m | (1 << y))
        })
        .collect();

    fn search(balls: &[u32], start: usize, left: usize, acc: u32, full: u32) -> bool {
        if acc == full {
            return true;
        }
        if left == 0 {
            return false;
        }
        (start..balls.len()).any(|c| search(balls, c + 1, left - 1, acc | balls[c], full))
    }

    Ok((1..=n)
        .find(|&k| search(&balls, 0, k, 0, full))
        .expect("n balls always cover"))
}
