use rand::Rng as _;

use crate::rng::Rng;
use crate::{Error, Result};

/// Interquartile mean with fractional trimming.
///
/// `n / 4` samples are trimmed from each end of the sorted values; a sample
/// straddling a cut keeps the fraction of its unit width inside the middle half.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("iqm of an empty sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::non_finite("iqm input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&sorted))
}

fn iqm_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let (lo, hi) = (n / 4.0, n - n / 4.0);
    let mut acc = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let w = ((i + 1) as f64).min(hi) - (i as f64).max(lo);
        if w > 0.0 {
            acc += w * x;
        }
    }
    acc / (hi - lo)
}

/// Per-timepoint IQM with a percentile-bootstrap interval over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Percentile bootstrap of the IQM over the rows of `runs` (seeds x timepoints).
///
/// Each replicate resamples whole seeds with replacement and is shared by
/// every timepoint. Bounds are widened to contain the point estimate when
/// the bootstrap distribution does not.
pub fn bootstrap_ci(runs: &[Vec<f64>], level: f64, n_boot: usize, rng: &mut Rng) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::contract(format!("confidence level {level} outside (0, 1)")));
    }
    if runs.len() < 2 {
        return Err(Error::contract(format!(
            "bootstrap needs at least 2 seeds, got {}",
            runs.len()
        )));
    }
    if n_boot < 1 {
        return Err(Error::contract("bootstrap needs at least one replicate"));
    }
    let t = runs[0].len();
    if runs.iter().any(|r| r.len() != t) {
        return Err(Error::contract("seeds have different numbers of timepoints"));
    }
    let n = runs.len();
    let column = |j: usize| -> Vec<f64> { runs.iter().map(|r| r[j]).collect() };
    let point = (0..t).map(|j| iqm(&column(j))).collect::<Result<Vec<_>>>()?;

    let mut boots = vec![Vec::with_capacity(n_boot); t];
    let mut draw = vec![0.0; n];
    let mut idx = vec![0usize; n];
    for _ in 0..n_boot {
        for k in idx.iter_mut() {
            *k = rng.random_range(0..n);
        }
        for (j, b) in boots.iter_mut().enumerate() {
            for (d, &k) in draw.iter_mut().zip(&idx) {
                *d = runs[k][j];
            }
            draw.sort_by(f64::total_cmp);
            b.push(iqm_sorted(&draw));
        }
    }
    let alpha = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(t);
    let mut upper = Vec::with_capacity(t);
    for (b, &p) in boots.iter_mut().zip(&point) {
        b.sort_by(f64::total_cmp);
        lower.push(quantile(b, alpha).min(p));
        upper.push(quantile(b, 1.0 - alpha).max(p));
    }
    Ok(Interval { point, lower, upper })
}

/// Maps returns to `[0, 1]` with fixed per-environment `(worst, best)` bounds.
pub fn normalize_returns(runs: &[Vec<f64>], bounds: (f64, f64)) -> Vec<Vec<f64>> {
    let (lo, hi) = bounds;
    runs.iter()
        .map(|r| r.iter().map(|x| (x - lo) / (hi - lo)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    /// Repeating every sample four times makes the quarter trim whole.
    fn iqm_by_replication(values: &[f64]) -> f64 {
        let mut rep: Vec<f64> = values.iter().flat_map(|&v| [v; 4]).collect();
        rep.sort_by(f64::total_cmp);
        let n = values.len();
        rep[n..3 * n].iter().sum::<f64>() / (2 * n) as f64
    }

    #[test]
    fn iqm_examples() {
        let eight: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(iqm(&eight).unwrap(), 4.5);
        assert_eq!(iqm(&[3.25; 7]).unwrap(), 3.25);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(iqm(&ten).unwrap(), 5.5);
        assert_eq!(iqm_by_replication(&ten), 5.5);
        assert_eq!(iqm(&[42.0]).unwrap(), 42.0);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn iqm_matches_replication_oracle() {
        let mut rng = stream(0, 0);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let (a, b) = (iqm(&v).unwrap(), iqm_by_replication(&v));
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn iqm_is_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..30), i in 0usize..30, bump in 0.0f64..100.0) {
            let i = i % v.len();
            let mut w = v.clone();
            w[i] += bump;
            prop_assert!(iqm(&w).unwrap() >= iqm(&v).unwrap() - 1e-9);
        }

        #[test]
        fn iqm_is_affine_equivariant(v in prop::collection::vec(-1e3f64..1e3, 1..30), shift in -50.0f64..50.0, scale in 0.01f64..20.0) {
            let base = iqm(&v).unwrap();
            let moved: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
            prop_assert!((iqm(&moved).unwrap() - (scale * base + shift)).abs() < 1e-9 * (1.0 + scale * base.abs() + shift.abs()));
        }
    }

    #[test]
    fn identical_seeds_give_zero_width() {
        let runs = vec![vec![1.0, 2.0, -3.0]; 5];
        let ci = bootstrap_ci(&runs, 0.95, 200, &mut stream(1, 1)).unwrap();
        assert_eq!(ci.lower, ci.point);
        assert_eq!(ci.upper, ci.point);
    }

    #[test]
    fn bounds_bracket_the_point_and_are_reproducible() {
        let mut rng = stream(2, 2);
        for _ in 0..50 {
            let runs: Vec<Vec<f64>> = (0..rng.random_range(2..8))
                .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let a = bootstrap_ci(&runs, 0.9, 100, &mut stream(3, 3)).unwrap();
            let b = bootstrap_ci(&runs, 0.9, 100, &mut stream(3, 3)).unwrap();
            assert_eq!(a, b);
            for j in 0..4 {
                assert!(a.lower[j] <= a.point[j] && a.point[j] <= a.upper[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let runs = vec![vec![1.0], vec![2.0]];
        let mut rng = stream(0, 0);
        assert!(bootstrap_ci(&runs, 1.0, 10, &mut rng).is_err());
        assert!(bootstrap_ci(&runs, 0.0, 10, &mut rng).is_err());
        assert!(bootstrap_ci(&runs[..1], 0.95, 10, &mut rng).is_err());
        assert!(bootstrap_ci(&[vec![1.0], vec![1.0, 2.0]], 0.95, 10, &mut rng).is_err());
    }

    #[test]
    fn normalisation_maps_bounds_to_unit_interval() {
        let n = normalize_returns(&[vec![-3300.0, 0.0, -1650.0]], (-3300.0, 0.0));
        assert_eq!(n, vec![vec![0.0, 1.0, 0.5]]);
    }

    /// Fraction of 95% intervals containing the population IQM (0 for a
    /// standard normal) across independent 10-seed samples.
    fn coverage(replications: usize, seed: u64) -> f64 {
        let mut rng = stream(seed, 0);
        let mut hits = 0;
        for _ in 0..replications {
            let runs: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect();
            let ci = bootstrap_ci(&runs, 0.95, 1000, &mut rng).unwrap();
            if ci.lower[0] <= 0.0 && 0.0 <= ci.upper[0] {
                hits += 1;
            }
        }
        hits as f64 / replications as f64
    }

    #[test]
    fn coverage_is_near_nominal() {
        let c = coverage(1000, 7);
        assert!((0.92..=0.98).contains(&c), "coverage {c}");
    }
}
