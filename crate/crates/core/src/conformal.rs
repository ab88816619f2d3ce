//! Split-conformal quantile calibration and prediction-set construction.
//!
//! The calibration scores are the per-row maximum probabilities of the source
//! set, not the true-class scores used by textbook split conformal. The level
//! `ceil(alpha * (m + 1)) / m` routinely exceeds one when `alpha` is large; the
//! quantile clamps it to the largest order statistic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of calibrating a conformal threshold on `m` scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration<T = f64> {
    pub t_hat: T,
    pub alpha: T,
    pub m: usize,
    /// 1-based order statistic selected as `t_hat`.
    pub quantile_index: usize,
}

fn finite_cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("scores are finite")
}

/// `ceil(x)`, except that values within a few ulps of an integer snap to it.
/// A level `c / m` multiplied back by `m` must give `c`, not `c + 1`.
fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 8.0 * f64::EPSILON * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// 1-based order-statistic index `clamp(ceil(q * m), 1, m)`.
pub fn quantile_index(m: usize, q: f64) -> usize {
    let k = ceil_snapped(q * m as f64);
    if k.is_nan() || k < 1.0 {
        1
    } else if k >= m as f64 {
        m
    } else {
        k as usize
    }
}

/// Empirical quantile: the `clamp(ceil(q * m), 1, m)`-th smallest score.
/// Levels above one select the maximum.
pub fn quantile<T: Scalar>(scores: &[T], q: f64) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue { row: i, col: 0 });
    }
    let k = quantile_index(scores.len(), q);
    let mut work = scores.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(k - 1, finite_cmp);
    Ok(*kth)
}

/// Calibrates `t_hat = Q(scores, ceil(alpha * (m + 1)) / m)`.
pub fn conformal_threshold<T: Scalar>(
    calibration_scores: &[T],
    alpha: T,
) -> Result<ConformalCalibration<T>> {
    let m = calibration_scores.len();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let a = alpha.as_f64();
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidConfig(format!("alpha {a} is outside [0, 1]")));
    }
    let q = (a * (m as f64 + 1.0)).ceil() / m as f64;
    let t_hat = quantile(calibration_scores, q)?;
    Ok(ConformalCalibration {
        t_hat,
        alpha,
        m,
        quantile_index: quantile_index(m, q),
    })
}

/// Classes whose probability is strictly above `t_hat`. May be empty.
pub fn prediction_set<T: Scalar>(row: &[T], t_hat: T) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &p)| p > t_hat)
        .map(|(j, _)| j)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIVE: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&FIVE, 1.0).unwrap(), 0.9);
        assert_eq!(quantile(&FIVE, 0.4).unwrap(), 0.6);
        assert_eq!(quantile(&[0.3], 0.0).unwrap(), 0.3);
        assert_eq!(quantile(&[0.3], 7.5).unwrap(), 0.3);
        assert!(matches!(quantile::<f64>(&[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn quantile_level_times_m_is_not_bumped() {
        // 1/49 * 49 is 0.999...9 and 3/10 * 10 is 3.000...04 in binary; both
        // must select exactly the c-th order statistic.
        for m in 1..200usize {
            for c in 1..=m {
                assert_eq!(quantile_index(m, c as f64 / m as f64), c, "m={m} c={c}");
            }
        }
    }

    #[test]
    fn conformal_threshold_examples() {
        let cal = conformal_threshold(&FIVE, 0.8).unwrap();
        assert_eq!((cal.t_hat, cal.quantile_index, cal.m), (0.9, 5, 5));
        let cal = conformal_threshold(&FIVE, 0.0).unwrap();
        assert_eq!((cal.t_hat, cal.quantile_index), (0.5, 1));
        let cal = conformal_threshold(&FIVE, 1.0).unwrap();
        assert_eq!((cal.t_hat, cal.quantile_index), (0.9, 5));
        // ceil(0.5 * 6) / 5 = 3/5 -> third smallest
        let cal = conformal_threshold(&[0.9, 0.5, 0.8, 0.6, 0.7], 0.5).unwrap();
        assert_eq!((cal.t_hat, cal.quantile_index), (0.7, 3));
        assert!(conformal_threshold(&FIVE, 1.5).is_err());
        assert!(matches!(conformal_threshold::<f64>(&[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn prediction_set_examples() {
        let row = [0.5, 0.3, 0.2];
        assert_eq!(prediction_set(&row, 0.25), vec![0, 1]);
        assert!(prediction_set(&row, 0.5).is_empty());
        assert_eq!(prediction_set(&row, 0.0), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn quantile_is_member_and_monotone(
            scores in prop::collection::vec(-10.0f64..10.0, 1..50),
            q1 in 0.0f64..1.5,
            q2 in 0.0f64..1.5,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = quantile(&scores, lo).unwrap();
            let b = quantile(&scores, hi).unwrap();
            prop_assert!(scores.contains(&a));
            prop_assert!(a <= b);
        }

        #[test]
        fn threshold_permutation_invariant(
            mut scores in prop::collection::vec(0.0f64..1.0, 1..50),
            alpha in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let before = conformal_threshold(&scores, alpha).unwrap();
            let n = scores.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                scores.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(before, conformal_threshold(&scores, alpha).unwrap());
        }

        #[test]
        fn set_size_non_increasing_in_threshold(
            row in prop::collection::vec(0.0f64..1.0, 2..8),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(prediction_set(&row, lo).len() >= prediction_set(&row, hi).len());
        }
    }
}
