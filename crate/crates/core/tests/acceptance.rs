//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout:
//! `cargo test -p topo-core --test acceptance`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use topo_core::analysis::{granulated_kendall, kendall_tau, GridPoint};
use topo_core::complexity::{compute_complexities, ComputeSpec, ScaleToken};
use topo_core::magnitude::{
    magnitude_of, metric_identification, solve_weighting, SolverConfig, SolverKind, SolverMethod,
};
use topo_core::metrics::{euclidean_distance_matrix, ProjectionSpec};
use topo_core::ph0::{
    e_alpha_of, estimate_ph_dim, minimum_spanning_edges, ph0_lifetimes, DimProtocol,
};
use topo_core::synth::{
    brute_force_mst_cost, exact_covering_number, greedy_covering_number, greedy_packing_number,
    sample_points, synth_loss_bundle, LossSynthSpec, Shape, SynthSpec,
};
use topo_core::{DistanceMatrix, Matrix, MemoryBudget, MetricKind, IDENTIFICATION_TOL};

type Check = Result<String, String>;

fn euclid(points: &[Vec<f64>]) -> DistanceMatrix {
    let m = Matrix::from_rows(points).unwrap();
    euclidean_distance_matrix(&m, None, &MemoryBudget::unlimited()).unwrap()
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Symmetric matrix with random entries; `levels` > 0 rounds entries onto
/// that many values to force ties.
fn random_weights(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> DistanceMatrix {
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if levels > 0 {
                f64::from(rng.random_range(1..=levels))
            } else {
                rng.random::<f64>()
            };
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    DistanceMatrix::from_entries(n, entries, MetricKind::Euclidean).unwrap()
}

fn mst_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = rng.random_range(1..=7);
        let d = match k % 3 {
            0 => euclid(&random_cloud(&mut rng, n, 2)),
            1 => random_weights(&mut rng, n, 0),
            _ => random_weights(&mut rng, n, 3),
        };
        let diff = (minimum_spanning_edges(&d).total() - brute_force_mst_cost(&d).unwrap()).abs();
        worst = worst.max(diff);
    }
    let elapsed = start.elapsed();
    if worst > 1e-12 {
        return Err(format!("max |MST - brute force| = {worst:e}"));
    }
    if elapsed > Duration::from_secs(5) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "100 matrices, max deviation {worst:e}, {elapsed:?}"
    ))
}

fn ph0_equals_mst() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut with_ties = 0;
    for k in 0..100 {
        let n = rng.random_range(1..=50);
        let d = match k % 4 {
            0 => euclid(&random_cloud(&mut rng, n, 3)),
            1 => random_weights(&mut rng, n, 0),
            2 => random_weights(&mut rng, n, 4),
            // integer grid: many equal distances and duplicate points
            _ => euclid(
                &(0..n)
                    .map(|_| {
                        vec![
                            f64::from(rng.random_range(0..4u8)),
                            f64::from(rng.random_range(0..4u8)),
                        ]
                    })
                    .collect::<Vec<_>>(),
            ),
        };
        let mst = minimum_spanning_edges(&d);
        let ph0 = ph0_lifetimes(&d);
        if mst.lengths() != ph0.lengths() {
            return Err(format!(
                "matrix {k} (N = {n}): {:?} vs {:?}",
                mst.lengths(),
                ph0.lengths()
            ));
        }
        if mst.lengths().windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
    }
    Ok(format!(
        "100 matrices identical as multisets ({with_ties} with tied lengths)"
    ))
}

/// Clouds of 5..=14 points with at least two distinct points, some with
/// duplicates, and five deltas spread over their pairwise distances.
fn packing_corpus() -> Vec<(DistanceMatrix, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..50)
        .map(|k| {
            let n = rng.random_range(5..=14);
            let mut pts = random_cloud(&mut rng, n, 1 + k % 3);
            if k % 5 == 0 {
                let copy = pts[0].clone();
                pts[n - 1] = copy;
            }
            let d = euclid(&pts);
            let mut dists: Vec<f64> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| d.get(i, j))
                .filter(|&v| v > 0.0)
                .collect();
            dists.sort_by(f64::total_cmp);
            let deltas = [0.05, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|q| dists[((dists.len() - 1) as f64 * q) as usize])
                .collect();
            (d, deltas)
        })
        .collect()
}

fn packing_lemma() -> Check {
    let mut checks = 0;
    for (k, (d, deltas)) in packing_corpus().iter().enumerate() {
        for &delta in deltas {
            let p = greedy_packing_number(d, delta) as f64;
            for alpha in [0.0, 0.5, 1.0] {
                let e = e_alpha_of(d, alpha).unwrap();
                let bound = 0.5 * p * delta.powf(alpha);
                if e < bound * (1.0 - 1e-12) {
                    return Err(format!(
                        "cloud {k}, delta {delta}, alpha {alpha}: E = {e} < {bound}"
                    ));
                }
                checks += 1;
            }
        }
    }
    Ok(format!(
        "{checks} (cloud, delta, alpha) checks, zero violations"
    ))
}

fn covering_packing() -> Check {
    let mut checks = 0;
    let mut greedy_over = 0;
    for (k, (d, deltas)) in packing_corpus().iter().enumerate() {
        for &delta in deltas {
            let p = greedy_packing_number(d, delta);
            let cover = exact_covering_number(d, 2.0 * delta).unwrap();
            if cover > p {
                return Err(format!(
                    "cloud {k}, delta {delta}: N_2d = {cover} > P_d = {p}"
                ));
            }
            if greedy_covering_number(d, 2.0 * delta) > p {
                greedy_over += 1;
            }
            checks += 1;
        }
    }
    Ok(format!(
        "{checks} (cloud, delta) pairs, zero violations (greedy set cover exceeded P_d in {greedy_over})"
    ))
}

fn magnitude_closed_forms() -> Check {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dist = rng.random_range(0.05..5.0);
        let s = rng.random_range(0.05..5.0);
        let d = euclid(&[vec![0.0], vec![dist]]);
        let mag = magnitude_of(&d, s, &cfg).map_err(|e| e.to_string())?.mag;
        worst = worst.max((mag - 2.0 / (1.0 + (-s * dist).exp())).abs());
    }
    if worst > 1e-10 {
        return Err(format!("two-point deviation {worst:e}"));
    }
    let single = magnitude_of(&euclid(&[vec![0.3, 0.7]]), 2.0, &cfg).map_err(|e| e.to_string())?;
    if single.mag != 1.0 {
        return Err(format!("single point magnitude {}", single.mag));
    }
    let ten = euclid(&random_cloud(&mut rng, 10, 2));
    let s = 1e6 / ten.min_positive_distance(0.0).unwrap();
    let mag = magnitude_of(&ten, s, &cfg).map_err(|e| e.to_string())?.mag;
    if (mag - 10.0).abs() > 1e-6 {
        return Err(format!("10 points at large s: {mag}"));
    }
    Ok(format!(
        "two-point max deviation {worst:e}; single point 1; ten points {mag}"
    ))
}

fn pmag_dominance_and_limits() -> Check {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut min_gap = f64::INFINITY;
    for k in 0..200 {
        let n = rng.random_range(2..=40);
        let d = euclid(&random_cloud(&mut rng, n, 1 + k % 3));
        let s = 10f64.powf(rng.random_range(-1.0..2.5));
        let r = magnitude_of(&d, s, &cfg).map_err(|e| format!("case {k}: {e}"))?;
        if r.pmag < r.mag - 1e-12 {
            return Err(format!("case {k}: pmag {} < mag {}", r.pmag, r.mag));
        }
        min_gap = min_gap.min(r.pmag - r.mag);
    }

    // Large-s probe on generic clouds: all weights positive, pmag = mag.
    let mut worst_large: f64 = 0.0;
    for k in 0..20 {
        let n = rng.random_range(2..=8);
        let d = euclid(&random_cloud(&mut rng, n, 2));
        let s = 1e3 / d.min_positive_distance(0.0).unwrap();
        let r = magnitude_of(&d, s, &cfg).map_err(|e| format!("large-s probe {k}: {e}"))?;
        worst_large = worst_large.max((r.pmag - r.mag).abs());
    }
    if worst_large > 1e-9 {
        return Err(format!("|pmag - mag| at large s = {worst_large:e}"));
    }

    // Small-s probe. As s -> 0 the weighting tends to D^-1 1 / (1' D^-1 1),
    // so pmag -> 1 exactly when that limit has no negative entry; those
    // are the well-conditioned clouds. Collinear clouds and regular
    // polygons qualify; random planar clouds are kept only if they do.
    let mut corpus: Vec<Vec<Vec<f64>>> = Vec::new();
    for _ in 0..5 {
        let n = rng.random_range(2..=8);
        corpus.push((0..n).map(|_| vec![rng.random::<f64>() * 5.0]).collect());
    }
    for n in 3..=7 {
        let (r, phase) = (rng.random_range(0.5..3.0), rng.random::<f64>());
        corpus.push(
            (0..n)
                .map(|i| {
                    let t = phase + std::f64::consts::TAU * i as f64 / n as f64;
                    vec![r * t.cos(), r * t.sin()]
                })
                .collect(),
        );
    }
    let (mut kept, mut excluded) = (0, 0);
    while kept < 10 {
        let n = rng.random_range(3..=8);
        let pts = random_cloud(&mut rng, n, 2);
        let d = euclid(&pts);
        let dm = nalgebra::DMatrix::from_row_slice(n, n, d.entries());
        let limit = dm
            .lu()
            .solve(&nalgebra::DVector::from_element(n, 1.0))
            .ok_or("singular D")?;
        if limit.iter().all(|&b| b >= 0.0) {
            corpus.push(pts);
            kept += 1;
        } else {
            excluded += 1;
        }
    }
    let mut worst_small: f64 = 0.0;
    for (k, pts) in corpus.iter().enumerate() {
        let d = euclid(pts);
        let r = magnitude_of(&d, 1e-4 / d.max_distance(), &cfg)
            .map_err(|e| format!("small-s probe {k}: {e}"))?;
        worst_small = worst_small.max((r.pmag - 1.0).abs());
    }
    if worst_small > 1e-2 {
        return Err(format!("|pmag - 1| at small s = {worst_small:e}"));
    }
    Ok(format!(
        "200 cases, min(pmag - mag) = {min_gap:e}; large-s |pmag - mag| <= {worst_large:e}; \
         small-s |pmag - 1| <= {worst_small:e} on {} clouds ({excluded} random clouds with negative limit weights excluded)",
        corpus.len()
    ))
}

fn quotient_invariance() -> Check {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let n = rng.random_range(2..=30);
        let pts = random_cloud(&mut rng, n, 2);
        let doubled: Vec<Vec<f64>> = pts.iter().chain(pts.iter()).cloned().collect();
        let (d, dd) = (euclid(&pts), euclid(&doubled));
        for alpha in [0.5, 1.0, 2.0] {
            let (a, b) = (
                e_alpha_of(&d, alpha).unwrap(),
                e_alpha_of(&dd, alpha).unwrap(),
            );
            worst = worst.max((a - b).abs());
        }
        for s in [0.5, 3.0, 20.0] {
            let a = magnitude_of(&d, s, &cfg).map_err(|e| format!("cloud {k}: {e}"))?;
            let b = magnitude_of(&dd, s, &cfg).map_err(|e| format!("cloud {k}: {e}"))?;
            worst = worst
                .max((a.mag - b.mag).abs())
                .max((a.pmag - b.pmag).abs());
        }
    }
    if worst > 1e-10 {
        return Err(format!("max change {worst:e}"));
    }
    Ok(format!("20 clouds doubled, max change {worst:e}"))
}

fn solver_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // A residual r only bounds entry errors by cond(M) * r, so both solvers
    // run tighter than the 1e-8 residual the criterion asks for.
    let krylov = SolverConfig {
        method: SolverMethod::Krylov,
        tolerance: 1e-11,
        ..Default::default()
    };
    let dense = SolverConfig {
        method: SolverMethod::Dense,
        tolerance: 1e-11,
        ..Default::default()
    };
    let (mut worst_entry, mut worst_res): (f64, f64) = (0.0, 0.0);
    for k in 0..50 {
        let n = rng.random_range(2..=200);
        let d = euclid(&random_cloud(&mut rng, n, 1 + k % 4));
        let q = metric_identification(&d, IDENTIFICATION_TOL);
        // scales where the spread of the cloud is a few length units
        let s = rng.random_range(2.0..30.0) / d.max_distance();
        let a = solve_weighting(&q, s, &krylov).map_err(|e| format!("system {k}: {e}"))?;
        let b = solve_weighting(&q, s, &dense).map_err(|e| format!("system {k}: {e}"))?;
        if a.solver != SolverKind::KrylovCg || b.solver != SolverKind::DenseDirect {
            return Err(format!(
                "system {k}: unexpected solvers {:?}/{:?}",
                a.solver, b.solver
            ));
        }
        let diff = a
            .beta
            .iter()
            .zip(&b.beta)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst_entry = worst_entry.max(diff);
        worst_res = worst_res.max(a.residual).max(b.residual);
    }
    if worst_entry > 1e-6 || worst_res > 1e-8 {
        return Err(format!(
            "max entry diff {worst_entry:e}, max residual {worst_res:e}"
        ));
    }
    Ok(format!(
        "50 systems, max entry diff {worst_entry:e}, max residual {worst_res:e}"
    ))
}

fn dimension_recovery() -> Check {
    let cases = [
        (Shape::Cube { dim: 2 }, 2.0, 0.3),
        (Shape::Cube { dim: 3 }, 3.0, 0.3),
        (Shape::Circle, 1.0, 0.2),
    ];
    let mut notes = Vec::new();
    for (shape, truth, tol) in cases {
        let start = Instant::now();
        let w = sample_points(&SynthSpec {
            shape: shape.clone(),
            n_points: 5000,
            seed: 11,
            noise: 0.0,
        })
        .unwrap();
        let d = euclidean_distance_matrix(&w.matrix, None, &MemoryBudget::unlimited()).unwrap();
        let est = estimate_ph_dim(&d, &DimProtocol::default()).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        if (est.dim - truth).abs() > tol {
            return Err(format!("{shape:?}: estimated {} vs {truth}", est.dim));
        }
        if elapsed > Duration::from_secs(60) {
            return Err(format!("{shape:?}: took {elapsed:?}"));
        }
        notes.push(format!("{truth} -> {:.3} ({:.1?})", est.dim, elapsed));
    }
    Ok(notes.join(", "))
}

fn jl_distortion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, dim) = (200, 10_000);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    let points = Matrix::from_vec(n, dim, data).unwrap();
    let budget = MemoryBudget::unlimited();
    let exact = euclidean_distance_matrix(&points, None, &budget).unwrap();
    let spec = ProjectionSpec::auto(0.05, 3);
    let projected = euclidean_distance_matrix(&points, Some(&spec), &budget).unwrap();
    let (mut within, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if ((projected.get(i, j) - exact.get(i, j)) / exact.get(i, j)).abs() <= 0.05 {
                within += 1;
            }
        }
    }
    let frac = within as f64 / total as f64;
    let k = spec.resolve_dim(n).unwrap();
    if frac < 0.99 {
        return Err(format!(
            "only {:.2}% of pairs within 5% (k = {k})",
            100.0 * frac
        ));
    }
    Ok(format!(
        "{:.2}% of {total} pairs within 5% (k = {k})",
        100.0 * frac
    ))
}

fn brute_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sx = (x[i] - x[j]).signum() * f64::from(u8::from(x[i] != x[j]));
            let sy = (y[i] - y[j]).signum() * f64::from(u8::from(y[i] != y[j]));
            if sx == 0.0 && sy == 0.0 {
                continue;
            } else if sx == 0.0 {
                tx += 1;
            } else if sy == 0.0 {
                ty += 1;
            } else if sx == sy {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    let den = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
    (den > 0.0).then(|| (c - d) as f64 / den)
}

fn hand_grid(c: [[f64; 3]; 3], g: [[f64; 3]; 3]) -> Vec<GridPoint> {
    let lrs = [0.01, 0.1, 1.0];
    let bss = [32.0, 64.0, 128.0];
    let mut pts = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            pts.push(GridPoint {
                learning_rate: lrs[i],
                batch_size: bss[j],
                complexity: c[i][j],
                gap: g[i][j],
            });
        }
    }
    pts
}

fn kendall() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..100 {
        let n = rng.random_range(2..=12);
        let x: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..5u8)))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..5u8)))
            .collect();
        match (kendall_tau(&x, &y).ok(), brute_tau(&x, &y)) {
            (Some(a), Some(b)) if a == b => {}
            (None, None) => {}
            (a, b) => return Err(format!("sequence {k}: {a:?} vs brute force {b:?}")),
        }
    }

    // c[lr][bs]; lr slices (fixed bs) see taus 1/3, -1, 1; bs slices all see 1/3
    let c = [[1.0, 11.0, 21.0], [2.0, 12.0, 22.0], [3.0, 13.0, 23.0]];
    let g = [[1.0, 13.0, 6.0], [3.0, 12.0, 7.0], [2.0, 11.0, 8.0]];
    let cases = [
        (
            "nontrivial",
            hand_grid(c, g),
            Some(1.0 / 9.0),
            Some(1.0 / 3.0),
            2.0 / 9.0,
        ),
        ("identical", hand_grid(c, c), Some(1.0), Some(1.0), 1.0),
        (
            "reversed",
            hand_grid(c, c.map(|r| r.map(|v: f64| -v))),
            Some(-1.0),
            Some(-1.0),
            -1.0,
        ),
    ];
    for (name, pts, lr, bs, psi) in cases {
        let coef = granulated_kendall(&pts, false).map_err(|e| format!("{name}: {e}"))?;
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        if !close(coef.psi_lr, lr) || !close(coef.psi_bs, bs) || (coef.psi - psi).abs() > 1e-12 {
            return Err(format!(
                "{name}: got ({:?}, {:?}, {})",
                coef.psi_lr, coef.psi_bs, coef.psi
            ));
        }
    }
    Ok("100 sequences exact; 3 hand-built 3x3 grids match".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn subsampling_robustness() -> Check {
    let bundle = synth_loss_bundle(
        &LossSynthSpec {
            n_points: 200,
            n_samples: 2000,
            latent_dim: 5,
            step: 0.05,
            seed: 13,
        },
        50,
    )
    .unwrap();
    let budget = MemoryBudget::unlimited();
    let base = ComputeSpec {
        metric: MetricKind::RhoP { p: 1.0 },
        alphas: vec![1.0],
        scales: vec![ScaleToken::SqrtN],
        pmag: false,
        subsample: None,
        ..Default::default()
    };
    let full = compute_complexities(&bundle, &base, &budget).map_err(|e| e.to_string())?;
    let (e_full, mag_full) = (full.e_alpha["1.0"], full.mag["sqrt-n"]);
    let mut e_dev = Vec::new();
    let mut mag_dev = Vec::new();
    for seed in 0..20 {
        let spec = ComputeSpec {
            subsample: Some(0.10),
            seed,
            ..base.clone()
        };
        let sub = compute_complexities(&bundle, &spec, &budget).map_err(|e| e.to_string())?;
        if sub.n_reference != Some(200) {
            return Err(format!("expected 200 columns, got {:?}", sub.n_reference));
        }
        e_dev.push(((sub.e_alpha["1.0"] - e_full) / e_full).abs());
        mag_dev.push(((sub.mag["sqrt-n"] - mag_full) / mag_full).abs());
    }
    let (e_med, mag_med) = (median(e_dev), median(mag_dev));
    if e_med > 0.10 || mag_med > 0.10 {
        return Err(format!(
            "median relative deviation E_1 {e_med:.4}, mag {mag_med:.4}"
        ));
    }
    Ok(format!(
        "median relative deviation over 20 seeds: E_1 {e_med:.4}, mag(sqrt n) {mag_med:.4}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("MST oracle", mst_oracle),
        ("PH0 equals MST", ph0_equals_mst),
        ("Packing lemma", packing_lemma),
        ("Covering/packing", covering_packing),
        ("Magnitude closed forms", magnitude_closed_forms),
        ("PMag dominance and limits", pmag_dominance_and_limits),
        ("Quotient invariance", quotient_invariance),
        ("Solver agreement", solver_agreement),
        ("Dimension recovery", dimension_recovery),
        ("JL distortion", jl_distortion),
        ("Kendall", kendall),
        ("Subsampling robustness", subsampling_robustness),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
