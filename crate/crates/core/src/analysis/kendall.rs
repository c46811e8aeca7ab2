use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};

/// Sorts `v` in place and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// `sum t(t-1)/2` over runs of equal consecutive keys.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm).
///
/// Errors on unequal lengths, on fewer than two observations, on
/// non-finite values, and when either sequence is constant (tau-b is
/// undefined there).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(TopoError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(TopoError::DegenerateInput("fewer than two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(TopoError::DegenerateInput("non-finite observation"));
    }
    // `+ 0.0` folds -0.0 into 0.0 so total_cmp agrees with ==
    let pairs: Vec<(f64, f64)> = {
        let mut p: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        p
    };
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let n2 = tied_pairs(&ys);
    if n1 == n0 || n2 == n0 {
        return Err(TopoError::DegenerateInput("constant sequence"));
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}

/// One run of a hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: f64,
    pub complexity: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    /// Mean slice-wise tau; `None` when no slice qualified.
    pub psi: Option<f64>,
    pub slices_used: usize,
    /// Slices with fewer than two runs, or (outside compatibility mode)
    /// with a constant complexity or gap.
    pub slices_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Learning rate varies, batch size fixed within each slice.
    pub psi_lr: Option<f64>,
    /// Batch size varies, learning rate fixed within each slice.
    pub psi_bs: Option<f64>,
    /// Mean of the available axis coefficients.
    #[serde(rename = "Psi")]
    pub psi: f64,
    /// Plain tau-b over all runs.
    pub tau: Option<f64>,
    pub lr_axis: AxisSummary,
    pub bs_axis: AxisSummary,
    pub n_points: usize,
}

fn tau_or_degenerate(x: &[f64], y: &[f64], degenerate_as_zero: bool) -> Result<Option<f64>> {
    match kendall_tau(x, y) {
        Ok(t) => Ok(Some(t)),
        Err(TopoError::DegenerateInput(_)) if degenerate_as_zero => Ok(Some(0.0)),
        Err(TopoError::DegenerateInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean tau over slices that fix `key` and vary the other axis.
fn axis(
    points: &[GridPoint],
    key: impl Fn(&GridPoint) -> f64,
    degenerate_as_zero: bool,
) -> Result<AxisSummary> {
    let mut slices: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in points {
        let entry = slices.entry((key(p) + 0.0).to_bits()).or_default();
        entry.0.push(p.complexity);
        entry.1.push(p.gap);
    }
    let mut taus = Vec::new();
    let mut skipped = 0;
    for (c, g) in slices.values() {
        if c.len() < 2 {
            skipped += 1;
            continue;
        }
        match tau_or_degenerate(c, g, degenerate_as_zero)? {
            Some(t) => taus.push(t),
            None => skipped += 1,
        }
    }
    Ok(AxisSummary {
        psi: (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64),
        slices_used: taus.len(),
        slices_skipped: skipped,
    })
}

/// Granulated Kendall coefficients over a learning-rate x batch-size grid.
///
/// Slices with a single run are skipped. Slices where the complexity or
/// the gap is constant are skipped too, unless `degenerate_as_zero` is
/// set, in which case they contribute `tau = 0`. Fails with
/// [`TopoError::NoValidSlice`] when neither axis has a usable slice.
pub fn granulated_kendall(points: &[GridPoint], degenerate_as_zero: bool) -> Result<Coefficients> {
    if let Some(p) = points
        .iter()
        .find(|p| !(p.complexity.is_finite() && p.gap.is_finite()))
    {
        return Err(TopoError::InvalidSpec(format!(
            "grid point at lr {} / bs {} has a non-finite value",
            p.learning_rate, p.batch_size
        )));
    }
    let lr_axis = axis(points, |p| p.batch_size, degenerate_as_zero)?;
    let bs_axis = axis(points, |p| p.learning_rate, degenerate_as_zero)?;
    let available: Vec<f64> = [lr_axis.psi, bs_axis.psi].into_iter().flatten().collect();
    if available.is_empty() {
        return Err(TopoError::NoValidSlice);
    }
    let c: Vec<f64> = points.iter().map(|p| p.complexity).collect();
    let g: Vec<f64> = points.iter().map(|p| p.gap).collect();
    let tau = if points.len() < 2 {
        None
    } else {
        tau_or_degenerate(&c, &g, degenerate_as_zero)?
    };
    Ok(Coefficients {
        psi_lr: lr_axis.psi,
        psi_bs: bs_axis.psi,
        psi: available.iter().sum::<f64>() / available.len() as f64,
        tau,
        lr_axis,
        bs_axis,
        n_points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pair-counting oracle.
    pub(crate) fn brute_tau(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let sx = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
                let sy = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
                match (sx, sy) {
                    (0, 0) => {}
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        let den = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
        (den > 0.0).then(|| (c - d) as f64 / den)
    }

    #[test]
    fn small_examples() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        // five concordant pairs, one tie in x: 5 / sqrt(5 * 6)
        let t = kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 5.0 / 30f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kendall_tau(&[1.0], &[1.0, 2.0]),
            Err(TopoError::LengthMismatch { .. })
        ));
        assert!(matches!(
            kendall_tau(&[1.0], &[1.0]),
            Err(TopoError::DegenerateInput(_))
        ));
        assert!(matches!(
            kendall_tau(&[1.0, 1.0], &[1.0, 2.0]),
            Err(TopoError::DegenerateInput(_))
        ));
        assert!(matches!(
            kendall_tau(&[f64::NAN, 1.0], &[1.0, 2.0]),
            Err(TopoError::DegenerateInput(_))
        ));
    }

    fn grid(f: impl Fn(f64, f64) -> (f64, f64)) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for lr in [0.01, 0.05, 0.1] {
            for bs in [32.0, 64.0, 128.0] {
                let (complexity, gap) = f(lr, bs);
                out.push(GridPoint {
                    learning_rate: lr,
                    batch_size: bs,
                    complexity,
                    gap,
                });
            }
        }
        out
    }

    #[test]
    fn granulated_hand_cases() {
        let perfect = granulated_kendall(&grid(|lr, bs| (lr * bs, lr * bs)), false).unwrap();
        assert_eq!(
            (perfect.psi_lr, perfect.psi_bs, perfect.psi),
            (Some(1.0), Some(1.0), 1.0)
        );
        assert_eq!(perfect.tau, Some(1.0));

        let anti = granulated_kendall(&grid(|lr, bs| (lr / bs, bs / lr)), false).unwrap();
        assert_eq!(
            (anti.psi_lr, anti.psi_bs, anti.psi),
            (Some(-1.0), Some(-1.0), -1.0)
        );

        // agrees along lr, disagrees along bs
        let mixed =
            granulated_kendall(&grid(|lr, bs| (lr - 1e-4 * bs, lr + 1e-4 * bs)), false).unwrap();
        assert_eq!(
            (mixed.psi_lr, mixed.psi_bs, mixed.psi),
            (Some(1.0), Some(-1.0), 0.0)
        );

        // complexity follows lr, gap follows bs: every slice is constant in one variable
        let split = grid(|lr, bs| (lr, bs));
        assert!(matches!(
            granulated_kendall(&split, false),
            Err(TopoError::NoValidSlice)
        ));
        let compat = granulated_kendall(&split, true).unwrap();
        assert_eq!(
            (compat.psi_lr, compat.psi_bs, compat.psi),
            (Some(0.0), Some(0.0), 0.0)
        );
        assert_eq!(compat.lr_axis.slices_used, 3);
    }

    #[test]
    fn granulated_skips_single_run_slices() {
        let mut pts = grid(|lr, bs| (lr * bs, lr * bs));
        pts.push(GridPoint {
            learning_rate: 0.2,
            batch_size: 256.0,
            complexity: 1.0,
            gap: 0.0,
        });
        let c = granulated_kendall(&pts, false).unwrap();
        assert_eq!((c.lr_axis.slices_used, c.lr_axis.slices_skipped), (3, 1));
        assert_eq!(c.psi, 1.0);
    }

    proptest! {
        #[test]
        fn knight_matches_pair_counting(
            pairs in prop::collection::vec((0u8..6, 0u8..6), 2..40)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            match (kendall_tau(&x, &y), brute_tau(&x, &y)) {
                (Ok(t), Some(b)) => prop_assert!((t - b).abs() < 1e-12),
                (Err(TopoError::DegenerateInput(_)), None) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn tau_is_bounded_and_antisymmetric(
            x in prop::collection::vec(-5.0f64..5.0, 3..30),
            seed in 0u64..1000,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 3.1 + (i as f64 + seed as f64).sin()).round()).collect();
            if let Ok(t) = kendall_tau(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&t));
                let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                prop_assert!((kendall_tau(&x, &neg).unwrap() + t).abs() < 1e-12);
                prop_assert!((kendall_tau(&y, &x).unwrap() - t).abs() < 1e-12);
            }
        }

        #[test]
        fn tau_invariant_under_increasing_maps(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..30),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| (p.0 * 4.0).round()).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(t) = kendall_tau(&x, &y) {
                let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                let ay: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
                prop_assert_eq!(kendall_tau(&ex, &y).unwrap(), t);
                prop_assert_eq!(kendall_tau(&x, &ay).unwrap(), t);
            }
        }

        #[test]
        fn single_slice_reduces_to_tau(
            vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..10)
        ) {
            let pts: Vec<GridPoint> = vals
                .iter()
                .enumerate()
                .map(|(i, &(c, g))| GridPoint { learning_rate: 0.1 * (i + 1) as f64, batch_size: 64.0, complexity: c, gap: g })
                .collect();
            let c: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let g: Vec<f64> = vals.iter().map(|v| v.1).collect();
            if let Ok(t) = kendall_tau(&c, &g) {
                let coef = granulated_kendall(&pts, false).unwrap();
                prop_assert_eq!(coef.psi_lr, Some(t));
                prop_assert_eq!(coef.psi_bs, None);
                prop_assert_eq!(coef.psi, t);
            }
        }
    }
}
