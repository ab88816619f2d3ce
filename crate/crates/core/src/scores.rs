//! Score and logit matrices, labeled datasets, and the per-row score
//! functions every estimator is built from.

use std::slice::ChunksExact;

use crate::error::{Error, Result};
use crate::scalar::{sum_f64, Scalar};

/// Absolute tolerance on a probability row summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Out-of-range probabilities within this distance of `[0, 1]` are clamped.
pub const CLAMP_DUST: f64 = 1e-9;

/// Read access shared by [`ScoreMatrix`] and [`LogitMatrix`].
pub trait Rows<T> {
    fn n_rows(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn as_slice(&self) -> &[T];

    fn row(&self, i: usize) -> &[T] {
        let k = self.n_classes();
        &self.as_slice()[i * k..(i + 1) * k]
    }

    fn rows(&self) -> ChunksExact<'_, T> {
        self.as_slice().chunks_exact(self.n_classes())
    }
}

fn check_shape(n: usize, k: usize, len: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::BadShape("at least one row is required".into()));
    }
    if k < 2 {
        return Err(Error::BadShape(format!("at least two classes are required, got {k}")));
    }
    if len != n * k {
        return Err(Error::BadShape(format!(
            "{len} values cannot form a {n}x{k} matrix"
        )));
    }
    Ok(())
}

fn flatten<T: Copy>(raw: &[Vec<T>]) -> Result<(usize, usize, Vec<T>)> {
    let n = raw.len();
    let k = raw.first().map_or(0, Vec::len);
    if let Some(i) = raw.iter().position(|r| r.len() != k) {
        return Err(Error::BadShape(format!(
            "row {i} has {} columns, expected {k}",
            raw[i].len()
        )));
    }
    Ok((n, k, raw.iter().flatten().copied().collect()))
}

/// `n x K` matrix of class probabilities; every row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T = f64> {
    n: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    /// Validates a row-major buffer. Values within [`CLAMP_DUST`] outside
    /// `[0, 1]` are clamped; with `renormalize` each row is divided by its
    /// sum instead of being rejected when it misses the tolerance.
    pub fn from_flat(n: usize, k: usize, mut data: Vec<T>, renormalize: bool) -> Result<Self> {
        check_shape(n, k, data.len())?;
        let lo = -CLAMP_DUST;
        let hi = 1.0 + CLAMP_DUST;
        for (idx, v) in data.iter_mut().enumerate() {
            let (row, col) = (idx / k, idx % k);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col });
            }
            let x = v.as_f64();
            if x < lo || x > hi {
                return Err(Error::ValueOutOfRange { row, col, value: x });
            }
            if x < 0.0 {
                *v = T::zero();
            } else if x > 1.0 {
                *v = T::one();
            }
        }
        for (row, chunk) in data.chunks_exact_mut(k).enumerate() {
            let sum = sum_f64(chunk.iter().copied());
            if (sum - 1.0).abs() <= ROW_SUM_TOLERANCE {
                continue;
            }
            if !renormalize || sum <= 0.0 {
                return Err(Error::RowSumViolation { row, sum });
            }
            for v in chunk.iter_mut() {
                *v = T::of_f64(v.as_f64() / sum);
            }
        }
        Ok(Self { n, k, data })
    }

    pub fn from_rows(raw: &[Vec<T>], renormalize: bool) -> Result<Self> {
        let (n, k, data) = flatten(raw)?;
        Self::from_flat(n, k, data, renormalize)
    }

    /// Reorders rows by `order` (a list of source row indices).
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { n: order.len(), k: self.k, data }
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

impl<T> Rows<T> for ScoreMatrix<T> {
    fn n_rows(&self) -> usize {
        self.n
    }
    fn n_classes(&self) -> usize {
        self.k
    }
    fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Validates a rectangular nested matrix into a [`ScoreMatrix`].
pub fn validate_scores<T: Scalar>(raw: &[Vec<T>], renormalize: bool) -> Result<ScoreMatrix<T>> {
    ScoreMatrix::from_rows(raw, renormalize)
}

/// `n x K` matrix of raw pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix<T = f64> {
    n: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> LogitMatrix<T> {
    pub fn from_flat(n: usize, k: usize, data: Vec<T>) -> Result<Self> {
        check_shape(n, k, data.len())?;
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: idx / k, col: idx % k });
        }
        Ok(Self { n, k, data })
    }

    pub fn from_rows(raw: &[Vec<T>]) -> Result<Self> {
        let (n, k, data) = flatten(raw)?;
        Self::from_flat(n, k, data)
    }

    pub fn select_rows(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { n: order.len(), k: self.k, data }
    }
}

impl<T> Rows<T> for LogitMatrix<T> {
    fn n_rows(&self) -> usize {
        self.n
    }
    fn n_classes(&self) -> usize {
        self.k
    }
    fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// A score or logit matrix with optional per-row class labels.
///
/// Labeled source data and unlabeled target data share this type; operations
/// that need labels report [`Error::MissingLabels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<M> {
    scores: M,
    labels: Option<Vec<usize>>,
}

impl<M> Dataset<M> {
    pub fn unlabeled(scores: M) -> Self {
        Self { scores, labels: None }
    }

    pub fn labeled<T>(scores: M, labels: Vec<usize>) -> Result<Self>
    where
        M: Rows<T>,
    {
        if labels.len() != scores.n_rows() {
            return Err(Error::BadShape(format!(
                "{} labels for {} rows",
                labels.len(),
                scores.n_rows()
            )));
        }
        let classes = scores.n_classes();
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange { row, label, classes });
        }
        Ok(Self { scores, labels: Some(labels) })
    }

    pub fn scores(&self) -> &M {
        &self.scores
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or(Error::MissingLabels("dataset has no label column"))
    }

    pub fn label_slice(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn into_parts(self) -> (M, Option<Vec<usize>>) {
        (self.scores, self.labels)
    }

    /// Replaces the score matrix, keeping the labels. The new matrix must
    /// have the same number of rows.
    pub fn map_scores<N>(self, f: impl FnOnce(M) -> Result<N>) -> Result<Dataset<N>> {
        Ok(Dataset { scores: f(self.scores)?, labels: self.labels })
    }
}

/// Labeled (or unlabeled) probabilities.
pub type ScoreDataset<T = f64> = Dataset<ScoreMatrix<T>>;
/// Labeled (or unlabeled) logits.
pub type LogitDataset<T = f64> = Dataset<LogitMatrix<T>>;

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Number of rows whose argmax equals the label.
pub fn correct_count<T: Scalar, M: Rows<T>>(data: &Dataset<M>) -> Result<usize> {
    let labels = data.labels()?;
    Ok(data
        .scores()
        .rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count())
}

/// Top-1 accuracy. Works on logits too, since softmax preserves the argmax.
pub fn accuracy<T: Scalar, M: Rows<T>>(data: &Dataset<M>) -> Result<T> {
    let correct = correct_count(data)?;
    Ok(T::of_f64(correct as f64 / data.scores().n_rows() as f64))
}

/// Per-row maximum probability.
pub fn max_confidence<T: Scalar>(scores: &ScoreMatrix<T>) -> Vec<T> {
    scores.rows().map(|row| row[argmax(row)]).collect()
}

/// Per-row `sum_j p_j ln p_j` with `0 ln 0 = 0`; larger means more confident.
pub fn neg_entropy<T: Scalar>(scores: &ScoreMatrix<T>) -> Vec<T> {
    scores
        .rows()
        .map(|row| {
            let mut acc = 0.0f64;
            for &p in row {
                let p = p.as_f64();
                if p > 0.0 {
                    acc += p * p.ln();
                }
            }
            T::of_f64(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(rows: &[&[f64]]) -> ScoreMatrix {
        let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        validate_scores(&raw, false).unwrap()
    }

    #[test]
    fn validate_accepts_simplex_rows() {
        let m = sm(&[&[0.7, 0.3], &[0.5, 0.5]]);
        assert_eq!((m.n_rows(), m.n_classes()), (2, 2));
    }

    #[test]
    fn validate_rejects_bad_row_sum() {
        let err = validate_scores(&[vec![0.7, 0.4]], false).unwrap_err();
        assert!(matches!(err, Error::RowSumViolation { row: 0, .. }));
    }

    #[test]
    fn validate_renormalizes_on_request() {
        let m = validate_scores(&[vec![0.6, 0.6]], true).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn validate_clamps_dust() {
        let m = validate_scores(&[vec![1.0 + 1e-10, -1e-10]], false).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn validate_rejects_out_of_range_and_non_finite() {
        assert!(matches!(
            validate_scores(&[vec![1.1, -0.1]], false),
            Err(Error::ValueOutOfRange { col: 0, .. })
        ));
        assert!(matches!(
            validate_scores(&[vec![f64::NAN, 1.0]], false),
            Err(Error::NonFiniteValue { row: 0, col: 0 })
        ));
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        assert!(matches!(validate_scores(&[vec![1.0]], false), Err(Error::BadShape(_))));
        assert!(matches!(validate_scores::<f64>(&[], false), Err(Error::BadShape(_))));
        assert!(matches!(
            validate_scores(&[vec![0.5, 0.5], vec![1.0, 0.0, 0.0]], false),
            Err(Error::BadShape(_))
        ));
    }

    #[test]
    fn labels_are_checked() {
        let m = sm(&[&[0.5, 0.5]]);
        assert!(matches!(
            Dataset::labeled(m.clone(), vec![2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2, .. })
        ));
        assert!(matches!(Dataset::labeled(m.clone(), vec![0, 1]), Err(Error::BadShape(_))));
        assert!(matches!(
            accuracy::<f64, _>(&Dataset::unlabeled(m)),
            Err(Error::MissingLabels(_))
        ));
    }

    #[test]
    fn accuracy_counts_and_breaks_ties_low() {
        let d = Dataset::labeled(sm(&[&[0.9, 0.1], &[0.2, 0.8]]), vec![0, 0]).unwrap();
        assert_eq!(accuracy(&d).unwrap(), 0.5);
        let d = Dataset::labeled(sm(&[&[0.5, 0.5]]), vec![0]).unwrap();
        assert_eq!(accuracy(&d).unwrap(), 1.0);
    }

    #[test]
    fn max_confidence_examples() {
        assert_eq!(max_confidence(&sm(&[&[0.7, 0.3], &[0.6, 0.4]])), vec![0.7, 0.6]);
        assert_eq!(max_confidence(&sm(&[&[0.25; 4]])), vec![0.25]);
        assert_eq!(max_confidence(&sm(&[&[0.0, 0.0, 1.0, 0.0]])), vec![1.0]);
    }

    #[test]
    fn neg_entropy_examples() {
        let ne = neg_entropy(&sm(&[&[0.5, 0.5], &[1.0, 0.0]]));
        assert!((ne[0] + std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(ne[1], 0.0);
        let ne = neg_entropy(&sm(&[&[0.7, 0.2, 0.1]]));
        // 0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1
        assert!((ne[0] - (-0.801_818_36)).abs() < 1e-6, "{}", ne[0]);
    }

    #[test]
    fn works_with_f32() {
        let m = validate_scores(&[vec![0.25f32, 0.75]], false).unwrap();
        assert_eq!(max_confidence(&m), vec![0.75f32]);
        let d = Dataset::labeled(m, vec![1]).unwrap();
        assert_eq!(accuracy(&d).unwrap(), 1.0f32);
    }

    fn simplex_rows(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), 1..20).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|x| x / s).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(rows in simplex_rows(4)) {
            let once = validate_scores(&rows, false).unwrap();
            let again = ScoreMatrix::from_flat(once.n_rows(), 4, once.as_slice().to_vec(), false).unwrap();
            prop_assert_eq!(once, again);
        }

        #[test]
        fn neg_entropy_within_bounds(rows in simplex_rows(3)) {
            let m = validate_scores(&rows, false).unwrap();
            for (v, mc) in neg_entropy(&m).into_iter().zip(max_confidence(&m)) {
                prop_assert!(v <= 0.0 && v >= -(3f64.ln()) - 1e-12);
                prop_assert!((1.0 / 3.0 - 1e-12..=1.0).contains(&mc));
            }
        }

        #[test]
        fn accuracy_invariant_under_row_rescaling(
            rows in simplex_rows(3),
            scale in 0.2f64..0.99,
            labels in prop::collection::vec(0usize..3, 20),
        ) {
            let n = rows.len();
            let labels = labels[..n].to_vec();
            let base = Dataset::labeled(validate_scores(&rows, false).unwrap(), labels.clone()).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let rescaled = Dataset::labeled(validate_scores(&scaled, true).unwrap(), labels).unwrap();
            prop_assert_eq!(accuracy::<f64, _>(&base).unwrap(), accuracy::<f64, _>(&rescaled).unwrap());
        }
    }
}
