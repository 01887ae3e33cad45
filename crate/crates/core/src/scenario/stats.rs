//! Probability-weighted sample statistics.

use serde::Serialize;

use super::{ProbabilityVector, ViewPanel};
use crate::error::{Error, Result};

/// Slack on prefix sums so that e.g. `0.1 * 5` still counts as `<= 0.5`.
const PREFIX_SLACK: f64 = 1e-12;

fn check(column: &[f64], p: &ProbabilityVector) -> Result<()> {
    p.check_len(column.len())
}

/// Indices sorted ascending by value, ties by row index.
pub(crate) fn sorted_indices(column: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..column.len()).collect();
    idx.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    idx
}

pub fn weighted_mean(column: &[f64], p: &ProbabilityVector) -> Result<f64> {
    check(column, p)?;
    Ok(column.iter().zip(p.as_slice()).map(|(v, w)| v * w).sum())
}

pub fn weighted_std(column: &[f64], p: &ProbabilityVector) -> Result<f64> {
    let m = weighted_mean(column, p)?;
    let w = p.as_slice();
    let mut support = column
        .iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| *v);
    if let Some(first) = support.next() {
        if support.all(|v| v == first) {
            return Ok(0.0);
        }
    }
    let var: f64 = column
        .iter()
        .zip(p.as_slice())
        .map(|(v, w)| w * (v - m) * (v - m))
        .sum();
    Ok(var.max(0.0).sqrt())
}

pub fn weighted_covariance(a: &[f64], b: &[f64], p: &ProbabilityVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let ma = weighted_mean(a, p)?;
    let mb = weighted_mean(b, p)?;
    Ok(a.iter()
        .zip(b)
        .zip(p.as_slice())
        .map(|((x, y), w)| w * (x - ma) * (y - mb))
        .sum())
}

/// Left order statistic at `level`: the value at the largest sorted prefix whose
/// probability does not exceed `level`. Falls back to the minimum when even the
/// first sorted weight exceeds `level`.
pub fn weighted_quantile(column: &[f64], p: &ProbabilityVector, level: f64) -> Result<f64> {
    check(column, p)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::LevelOutOfRange(level));
    }
    let order = sorted_indices(column);
    let w = p.as_slice();
    let mut cum = 0.0;
    let mut chosen = order[0];
    for &j in &order {
        cum += w[j];
        if cum <= level + PREFIX_SLACK {
            chosen = j;
        } else {
            break;
        }
    }
    Ok(column[chosen])
}

pub fn weighted_median(column: &[f64], p: &ProbabilityVector) -> Result<f64> {
    weighted_quantile(column, p, 0.5)
}

pub fn weighted_correlation(a: &[f64], b: &[f64], p: &ProbabilityVector) -> Result<f64> {
    let sa = weighted_std(a, p)?;
    let sb = weighted_std(b, p)?;
    if sa == 0.0 {
        return Err(Error::ZeroDispersion("first column".into()));
    }
    if sb == 0.0 {
        return Err(Error::ZeroDispersion("second column".into()));
    }
    let ma = weighted_mean(a, p)?;
    let mb = weighted_mean(b, p)?;
    let cross: f64 = a
        .iter()
        .zip(b)
        .zip(p.as_slice())
        .map(|((x, y), w)| w * x * y)
        .sum();
    Ok(((cross - ma * mb) / (sa * sb)).clamp(-1.0, 1.0))
}

/// Normalized ranks `rank / J` per column, ties broken by row index.
/// Returned column-major: one vector of length `J` per view column.
pub fn empirical_copula_ranks(panel: &ViewPanel) -> Vec<Vec<f64>> {
    panel.columns().iter().map(|c| copula_column(c)).collect()
}

pub(crate) fn copula_column(column: &[f64]) -> Vec<f64> {
    let j = column.len() as f64;
    let mut ranks = vec![0.0; column.len()];
    for (rank, idx) in sorted_indices(column).into_iter().enumerate() {
        ranks[idx] = (rank + 1) as f64 / j;
    }
    ranks
}

/// Number of scenarios in the CVaR tail: `floor((1 - gamma) J)`, at least one.
pub fn cvar_tail_size(num_scenarios: usize, gamma: f64) -> usize {
    let raw = (1.0 - gamma) * num_scenarios as f64;
    ((raw + 1e-9).floor() as usize).clamp(1, num_scenarios)
}

/// Conditional value at risk as a positive loss: minus the probability-weighted
/// average of the `floor((1 - gamma) J)` smallest p&l entries.
pub fn weighted_cvar(pnl: &[f64], p: &ProbabilityVector, gamma: f64) -> Result<f64> {
    check(pnl, p)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::LevelOutOfRange(gamma));
    }
    let tail = cvar_tail_size(pnl.len(), gamma);
    let w = p.as_slice();
    let (mut mass, mut sum) = (0.0, 0.0);
    for &j in sorted_indices(pnl).iter().take(tail) {
        mass += w[j];
        sum += w[j] * pnl[j];
    }
    if mass <= 0.0 {
        return Err(Error::EmptyTail);
    }
    Ok(-sum / mass)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStatistics {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    /// `(level, value)` pairs, ascending in level.
    pub quantiles: Vec<(f64, f64)>,
    /// `(gamma, cvar)` pairs.
    pub cvar: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedStatistics {
    pub columns: Vec<ColumnStatistics>,
    /// Pairwise correlations; `None` where a column has zero dispersion.
    pub correlation: Vec<Vec<Option<f64>>>,
}

pub fn weighted_statistics(
    panel: &ViewPanel,
    p: &ProbabilityVector,
    quantile_levels: &[f64],
    cvar_levels: &[f64],
) -> Result<WeightedStatistics> {
    let mut levels = quantile_levels.to_vec();
    levels.sort_by(f64::total_cmp);
    let mut columns = Vec::with_capacity(panel.num_columns());
    for (label, col) in panel.labels().iter().zip(panel.columns()) {
        columns.push(ColumnStatistics {
            label: label.clone(),
            mean: weighted_mean(col, p)?,
            std: weighted_std(col, p)?,
            median: weighted_median(col, p)?,
            quantiles: levels
                .iter()
                .map(|&u| weighted_quantile(col, p, u).map(|q| (u, q)))
                .collect::<Result<_>>()?,
            cvar: cvar_levels
                .iter()
                .map(|&g| weighted_cvar(col, p, g).map(|c| (g, c)))
                .collect::<Result<_>>()?,
        });
    }
    let k = panel.num_columns();
    let mut correlation = vec![vec![None; k]; k];
    for a in 0..k {
        for b in 0..k {
            correlation[a][b] = weighted_correlation(panel.column(a), panel.column(b), p).ok();
        }
    }
    Ok(WeightedStatistics {
        columns,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn pv(w: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(w.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn mean_examples() {
        assert_eq!(
            weighted_mean(&[1.0, 2.0, 3.0], &ProbabilityVector::uniform(3)).unwrap(),
            2.0
        );
        close(
            weighted_mean(&[0.0, 1.0], &pv(&[0.3, 0.7])).unwrap(),
            0.7,
            1e-15,
        );
        assert!(matches!(
            weighted_mean(&[1.0], &ProbabilityVector::uniform(2)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mean_of_normal_draws_within_sampling_error() {
        let j = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = weighted_mean(&v, &ProbabilityVector::uniform(j)).unwrap();
        assert!(m.abs() <= 3.0 / (j as f64).sqrt());
    }

    #[test]
    fn std_examples() {
        assert_eq!(
            weighted_std(&[1.0, 1.0, 1.0], &pv(&[0.2, 0.3, 0.5])).unwrap(),
            0.0
        );
        close(
            weighted_std(&[0.0, 2.0], &pv(&[0.5, 0.5])).unwrap(),
            1.0,
            1e-15,
        );
        close(
            weighted_std(&[-1.0, 0.0, 1.0], &pv(&[0.25, 0.5, 0.25])).unwrap(),
            0.5f64.sqrt(),
            1e-15,
        );
    }

    #[test]
    fn quantile_examples() {
        let u5 = ProbabilityVector::uniform(5);
        assert_eq!(
            weighted_quantile(&[10.0, 20.0, 30.0, 40.0, 50.0], &u5, 0.5).unwrap(),
            20.0
        );
        assert_eq!(
            weighted_quantile(&[1.0, 2.0], &pv(&[0.9, 0.1]), 0.5).unwrap(),
            1.0
        );
        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(
                weighted_quantile(&[1.0, 2.0], &pv(&[0.5, 0.5]), bad),
                Err(Error::LevelOutOfRange(_))
            ));
        }
    }

    #[test]
    fn quantile_of_uniform_draws() {
        let j = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Uniform::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..j).map(|_| dist.sample(&mut rng)).collect();
        let q = weighted_quantile(&v, &ProbabilityVector::uniform(j), 0.6).unwrap();
        close(q, 0.6, 0.05);
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            weighted_median(&[1.0, 2.0, 3.0], &ProbabilityVector::uniform(3)).unwrap(),
            1.0
        );
        assert_eq!(weighted_median(&[5.0], &pv(&[1.0])).unwrap(), 5.0);
        let p = ProbabilityVector::uniform(5);
        let mut v = vec![1.0, 2.0, 3.0, 4.0, 100.0];
        let before = weighted_median(&v, &p).unwrap();
        v[4] = 1e12;
        assert_eq!(weighted_median(&v, &p).unwrap(), before);
    }

    #[test]
    fn correlation_examples() {
        let p = ProbabilityVector::uniform(4);
        let a = [1.0, 3.0, -2.0, 0.5];
        close(weighted_correlation(&a, &a, &p).unwrap(), 1.0, 1e-15);
        close(
            weighted_correlation(&[1.0, -1.0], &[-1.0, 1.0], &pv(&[0.5, 0.5])).unwrap(),
            -1.0,
            1e-15,
        );
        assert!(matches!(
            weighted_correlation(&[1.0, 1.0], &[0.0, 1.0], &pv(&[0.5, 0.5])),
            Err(Error::ZeroDispersion(_))
        ));
    }

    #[test]
    fn correlation_matches_double_loop_oracle() {
        let j = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x + 0.7 * e
            })
            .collect();
        let raw: Vec<f64> = (0..j).map(|i| 1.0 + (i % 7) as f64).collect();
        let total: f64 = raw.iter().sum();
        let p =
            ProbabilityVector::renormalized(raw.iter().map(|w| w / total).collect(), 1e-9).unwrap();
        let w = p.as_slice();
        // pairwise form: cov = 1/2 sum_i sum_k w_i w_k (a_i - a_k)(b_i - b_k)
        let pair = |x: &[f64], y: &[f64]| {
            let mut s = 0.0;
            for i in 0..j {
                for k in 0..j {
                    s += w[i] * w[k] * (x[i] - x[k]) * (y[i] - y[k]);
                }
            }
            0.5 * s
        };
        let oracle = pair(&a, &b) / (pair(&a, &a).sqrt() * pair(&b, &b).sqrt());
        close(weighted_correlation(&a, &b, &p).unwrap(), oracle, 1e-12);
    }

    #[test]
    fn copula_rank_examples() {
        assert_eq!(
            copula_column(&[30.0, 10.0, 20.0]),
            vec![1.0, 1.0 / 3.0, 2.0 / 3.0]
        );
        assert_eq!(copula_column(&[7.0; 4]), vec![0.25, 0.5, 0.75, 1.0]);
        let j = 1000;
        let mut col: Vec<f64> = (0..j).map(|i| ((i * 7919) % j) as f64).collect();
        col[5] = 422.5; // strictly between the 422nd and 423rd smallest of the rest
        let ranks = copula_column(&col);
        assert_eq!(ranks[5] * j as f64, (ranks[5] * j as f64).round());
        let smaller = col.iter().filter(|v| **v < 422.5).count();
        assert_eq!(ranks[5], (smaller + 1) as f64 / j as f64);
    }

    #[test]
    fn cvar_examples() {
        let u4 = ProbabilityVector::uniform(4);
        assert_eq!(
            weighted_cvar(&[-10.0, -5.0, 0.0, 5.0], &u4, 0.75).unwrap(),
            10.0
        );
        assert_eq!(weighted_cvar(&[3.0; 4], &u4, 0.9).unwrap(), -3.0);
        assert!(matches!(
            weighted_cvar(&[-1.0, 2.0], &pv(&[0.0, 1.0]), 0.5),
            Err(Error::EmptyTail)
        ));
    }

    #[test]
    fn cvar_of_standard_normal() {
        let j = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
        // brute-force tail mean over the sorted sample
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let brute = -sorted[..500].iter().sum::<f64>() / 500.0;
        let cvar = weighted_cvar(&v, &ProbabilityVector::uniform(j), 0.95).unwrap();
        close(cvar, brute, 1e-12);
        // closed form for N(0,1): phi(z_0.95) / 0.05
        close(cvar, 2.0627, 0.1);
    }

    #[test]
    fn degenerate_probability_collapses_to_scenario() {
        let p = pv(&[0.0, 1.0, 0.0]);
        let v = [4.0, -2.0, 9.0];
        assert_eq!(weighted_mean(&v, &p).unwrap(), -2.0);
        assert_eq!(weighted_std(&v, &p).unwrap(), 0.0);
        assert_eq!(weighted_median(&v, &p).unwrap(), -2.0);
        assert_eq!(weighted_cvar(&v, &p, 0.5).unwrap(), 2.0);
    }

    fn column_and_weights() -> impl Strategy<Value = (Vec<f64>, ProbabilityVector)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(0.01..1.0f64, n),
            )
                .prop_map(|(v, raw)| {
                    let total: f64 = raw.iter().sum();
                    let p = ProbabilityVector::renormalized(
                        raw.iter().map(|w| w / total).collect(),
                        1e-9,
                    )
                    .unwrap();
                    (v, p)
                })
        })
    }

    proptest! {
        #[test]
        fn mean_within_range((v, p) in column_and_weights()) {
            let m = weighted_mean(&v, &p).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
        }

        #[test]
        fn std_zero_iff_constant_on_support((v, p) in column_and_weights(), c in -5.0..5.0f64) {
            prop_assert!(weighted_std(&vec![c; v.len()], &p).unwrap() == 0.0);
            let distinct = v.iter().any(|x| (x - v[0]).abs() > 1e-6);
            prop_assert_eq!(weighted_std(&v, &p).unwrap() > 0.0, distinct);
        }

        #[test]
        fn quantile_monotone_in_level((v, p) in column_and_weights(), a in 0.01..0.99f64, b in 0.01..0.99f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(weighted_quantile(&v, &p, lo).unwrap() <= weighted_quantile(&v, &p, hi).unwrap());
        }

        #[test]
        fn copula_ranks_are_permutations(v in prop::collection::vec(-5i32..5, 2..50)) {
            let col: Vec<f64> = v.iter().map(|x| *x as f64).collect();
            let j = col.len();
            let mut ranks: Vec<usize> = copula_column(&col).iter().map(|u| (u * j as f64).round() as usize).collect();
            ranks.sort();
            prop_assert_eq!(ranks, (1..=j).collect::<Vec<_>>());
        }

        #[test]
        fn cvar_translation((v, p) in column_and_weights(), c in -50.0..50.0f64, g in 0.05..0.95f64) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = weighted_cvar(&shifted, &p, g).unwrap();
            let b = weighted_cvar(&v, &p, g).unwrap();
            prop_assert!((a - (b - c)).abs() <= 1e-9);
        }

        #[test]
        fn duplicated_panel_statistics(v in prop::collection::vec(-100.0..100.0f64, 2..30), k in 1usize..30) {
            let j = v.len();
            // the left order statistic is duplication-invariant only at levels k / J
            let u = (k % j).max(1) as f64 / j as f64;
            let dup: Vec<f64> = v.iter().flat_map(|x| [*x, *x]).collect();
            let p = ProbabilityVector::uniform(j);
            let pd = ProbabilityVector::uniform(2 * j);
            prop_assert!((weighted_mean(&v, &p).unwrap() - weighted_mean(&dup, &pd).unwrap()).abs() < 1e-9);
            prop_assert!((weighted_std(&v, &p).unwrap() - weighted_std(&dup, &pd).unwrap()).abs() < 1e-9);
            prop_assert_eq!(weighted_quantile(&v, &p, u).unwrap(), weighted_quantile(&dup, &pd, u).unwrap());
            if j % 2 == 0 {
                prop_assert_eq!(weighted_median(&v, &p).unwrap(), weighted_median(&dup, &pd).unwrap());
            }
            // CVaR tail sizes line up when (1 - gamma) J is an integer
            let g = 1.0 - 1.0 / j as f64;
            prop_assert!((weighted_cvar(&v, &p, g).unwrap() - weighted_cvar(&dup, &pd, g).unwrap()).abs() < 1e-9);
        }
    }
}
