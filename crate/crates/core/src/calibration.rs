//! Temperature scaling.
//!
//! A single temperature `T` is fit on labeled source logits by minimizing the
//! mean negative log-likelihood of `softmax(z / T)`, then applied to source and
//! target alike. The search runs over `[0.01, 100]`: a 200-point log-spaced
//! grid locates the bracket, golden-section search refines it to `1e-4` in `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scores::{Dataset, LogitMatrix, Rows, ScoreMatrix};

pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 100.0;
pub const GRID_POINTS: usize = 200;
pub const TEMPERATURE_TOLERANCE: f64 = 1e-4;

/// Floor added to probabilities before taking logs in [`recover_logits`].
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Mean per-sample NLL at `temperature`.
    pub nll: f64,
    /// Winner of the coarse grid stage.
    pub grid_best: f64,
    /// Every row had constant logits, so the NLL does not depend on `T`; the
    /// fit fell back to `T = 1`.
    pub degenerate: bool,
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {t} must be positive and finite")));
    }
    Ok(())
}

fn softmax_into(row: &[f64], inv_t: f64, out: &mut [f64]) {
    let zmax = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = ((z - zmax) * inv_t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Max-shifted softmax of `logits / temperature`.
pub fn softmax<T: Scalar>(logits: &[T], temperature: T) -> Result<Vec<T>> {
    if let Some(col) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFiniteValue { row: 0, col });
    }
    check_temperature(temperature.as_f64())?;
    let row: Vec<f64> = logits.iter().map(|z| z.as_f64()).collect();
    let mut out = vec![0.0; row.len()];
    softmax_into(&row, 1.0 / temperature.as_f64(), &mut out);
    Ok(out.into_iter().map(T::of_f64).collect())
}

/// Row-wise softmax at `temperature`.
pub fn apply_temperature<T: Scalar>(logits: &LogitMatrix<T>, temperature: T) -> Result<ScoreMatrix<T>> {
    check_temperature(temperature.as_f64())?;
    let inv_t = 1.0 / temperature.as_f64();
    let k = logits.n_classes();
    let mut row = vec![0.0; k];
    let mut out = vec![0.0; k];
    let mut data = Vec::with_capacity(logits.as_slice().len());
    for r in logits.rows() {
        for (dst, z) in row.iter_mut().zip(r) {
            *dst = z.as_f64();
        }
        softmax_into(&row, inv_t, &mut out);
        data.extend(out.iter().map(|&p| T::of_f64(p)));
    }
    ScoreMatrix::from_flat(logits.n_rows(), k, data, false)
}

/// `ln(p + 1e-12)` per entry, for when only probabilities are available.
pub fn recover_logits<T: Scalar>(scores: &ScoreMatrix<T>) -> LogitMatrix<T> {
    let data = scores
        .as_slice()
        .iter()
        .map(|p| T::of_f64((p.as_f64() + LOG_FLOOR).ln()))
        .collect();
    LogitMatrix::from_flat(scores.n_rows(), scores.n_classes(), data)
        .expect("shape and finiteness carry over from a valid score matrix")
}

/// Mean negative log-likelihood of `softmax(z / temperature)` at the labels.
pub fn mean_nll<T: Scalar>(logits: &LogitMatrix<T>, labels: &[usize], temperature: f64) -> f64 {
    let inv_t = 1.0 / temperature;
    let mut total = 0.0f64;
    for (row, &y) in logits.rows().zip(labels) {
        let zmax = row.iter().map(|z| z.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in row {
            sum += ((z.as_f64() - zmax) * inv_t).exp();
        }
        total += sum.ln() - (row[y].as_f64() - zmax) * inv_t;
    }
    total / labels.len() as f64
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Golden-section minimization of a unimodal `f` on `[a, b]` until the
/// bracket is narrower than `tol`. Returns the best evaluated point.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Fits a temperature on labeled logits.
pub fn fit_temperature<T: Scalar>(source: &Dataset<LogitMatrix<T>>) -> Result<TemperatureFit> {
    let labels = source
        .labels()
        .map_err(|_| Error::MissingLabels("temperature scaling needs labeled source logits"))?;
    let logits = source.scores();

    let constant_rows = logits.rows().all(|r| r.iter().all(|z| *z == r[0]));
    if constant_rows {
        return Ok(TemperatureFit {
            temperature: 1.0,
            nll: mean_nll(logits, labels, 1.0),
            grid_best: 1.0,
            degenerate: true,
        });
    }

    let nll = |t: f64| mean_nll(logits, labels, t);
    let grid = log_grid(MIN_TEMPERATURE, MAX_TEMPERATURE, GRID_POINTS);
    let values: Vec<f64> = grid.iter().map(|&t| nll(t)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let (t_golden, f_golden) = golden_section_min(nll, lo, hi, TEMPERATURE_TOLERANCE);

    // Candidates in priority order; ties keep the earlier one.
    let mut temperature = grid[best];
    let mut value = values[best];
    for (t, v) in [(t_golden, f_golden), (1.0, nll(1.0))] {
        if v < value {
            temperature = t;
            value = v;
        }
    }
    Ok(TemperatureFit { temperature, nll: value, grid_best: grid[best], degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{argmax, validate_scores};
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0, 0.0], 2.0).unwrap();
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - s).abs() < 1e-15 && (p[1] - (1.0 - s)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);

        let p = softmax(&[3.0, 1.0, 0.0], 1.0).unwrap();
        let e = [3f64.exp(), 1f64.exp(), 1.0];
        let z: f64 = e.iter().sum();
        for j in 0..3 {
            assert!((p[j] - e[j] / z).abs() < 1e-15);
        }
        assert!((p[0] - 0.8438).abs() < 1e-4 && (p[1] - 0.1142).abs() < 1e-4 && (p[2] - 0.0420).abs() < 1e-4);

        let p = softmax(&[-5.0f64, 5.0, 0.3, -2.0], 100.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 0.05));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[f64::NAN, 0.0], 1.0), Err(Error::NonFiniteValue { .. })));
        assert!(softmax(&[1.0, 0.0], 0.0).is_err());
        assert!(softmax(&[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn apply_temperature_inverts_log() {
        let p = validate_scores::<f64>(&[vec![0.7, 0.2, 0.1], vec![0.05, 0.9, 0.05]], false).unwrap();
        let logits = LogitMatrix::from_flat(2, 3, p.as_slice().iter().map(|x| x.ln()).collect()).unwrap();
        let back = apply_temperature(&logits, 1.0).unwrap();
        for (a, b) in back.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let recovered = apply_temperature(&recover_logits(&p), 1.0).unwrap();
        for (a, b) in recovered.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let s = apply_temperature(&LogitMatrix::from_rows(&[vec![2.0f64, 0.0]]).unwrap(), 2.0).unwrap();
        assert!((s.row(0)[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section_min(|x| (x - 1.234).powi(2) + 3.0, 0.0, 5.0, 1e-8);
        assert!((x - 1.234).abs() < 1e-7);
        assert!((fx - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fit_hits_lower_bound_on_separable_sample() {
        let logits = LogitMatrix::from_rows(&[vec![10.0, 0.0]]).unwrap();
        let fit = fit_temperature(&Dataset::labeled(logits, vec![0]).unwrap()).unwrap();
        assert!((fit.temperature - MIN_TEMPERATURE).abs() < TEMPERATURE_TOLERANCE);
        assert!(!fit.degenerate);
    }

    #[test]
    fn fit_degenerate_constant_logits() {
        let logits = LogitMatrix::from_rows(&[vec![0.3, 0.3, 0.3], vec![-1.0, -1.0, -1.0]]).unwrap();
        let fit = fit_temperature(&Dataset::labeled(logits, vec![0, 2]).unwrap()).unwrap();
        assert_eq!(fit.temperature, 1.0);
        assert!(fit.degenerate);
        assert!((fit.nll - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_requires_labels() {
        let logits = LogitMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            fit_temperature(&Dataset::unlabeled(logits)),
            Err(Error::MissingLabels(_))
        ));
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(MIN_TEMPERATURE, MAX_TEMPERATURE, GRID_POINTS);
        assert_eq!(g.len(), 200);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert_eq!(g[199], 100.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    fn logit_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        (prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..40), prop::collection::vec(0usize..3, 40))
            .prop_map(|(rows, labels)| {
                let n = rows.len();
                (rows, labels[..n].to_vec())
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scaling_preserves_argmax_and_simplex(
            (rows, _) in logit_rows(),
            t in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let logits = LogitMatrix::from_rows(&rows).unwrap();
            let scaled = apply_temperature(&logits, t).unwrap();
            for (z, p) in logits.rows().zip(scaled.rows()) {
                prop_assert_eq!(argmax(z), argmax(p));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
                let q = softmax(&shifted, t).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn max_probability_non_increasing_in_temperature(
            (rows, _) in logit_rows(),
            t1 in 0.05f64..20.0,
            t2 in 0.05f64..20.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let logits = LogitMatrix::from_rows(&rows).unwrap();
            let a = apply_temperature(&logits, lo).unwrap();
            let b = apply_temperature(&logits, hi).unwrap();
            for (pa, pb) in a.rows().zip(b.rows()) {
                let ma = pa.iter().copied().fold(0.0, f64::max);
                let mb = pb.iter().copied().fold(0.0, f64::max);
                prop_assert!(mb <= ma + 1e-15);
            }
        }

        #[test]
        fn fit_beats_unit_temperature_and_grid((rows, labels) in logit_rows()) {
            let logits = LogitMatrix::from_rows(&rows).unwrap();
            let data = Dataset::labeled(logits.clone(), labels.clone()).unwrap();
            let fit = fit_temperature(&data).unwrap();
            prop_assert!((MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&fit.temperature));
            prop_assert!(fit.nll <= mean_nll(&logits, &labels, 1.0) + 1e-9);
            for t in log_grid(MIN_TEMPERATURE, MAX_TEMPERATURE, GRID_POINTS) {
                prop_assert!(fit.nll <= mean_nll(&logits, &labels, t) + 1e-6);
            }
        }
    }
}
