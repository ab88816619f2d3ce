//! Accuracy estimators for an unlabeled target set.
//!
//! All six methods consume only probability matrices: a labeled source set and
//! an unlabeled target set with the same number of classes.
//!
//! - `AC`: mean max-probability on the target.
//! - `DOC`: source accuracy plus the gap in average confidence. The default
//!   adds the absolute gap; [`DocConfig::signed`] uses the signed difference.
//! - `ATC-MC` / `ATC-NE`: pick a score threshold so that the fraction of
//!   source rows strictly above it matches source accuracy, then report the
//!   fraction of target rows strictly above it.
//! - `CPC-ACC` / `CPC-AC`: calibrate a conformal threshold on source
//!   max-probabilities at level `alpha` (source accuracy, or target average
//!   confidence), build the prediction set `{j : p_j > t_hat}` for each target
//!   row, and average the mean probability inside each set. An empty set falls
//!   back to the argmax singleton; such rows are counted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_threshold, prediction_set};
use crate::error::{Error, Result};
use crate::rng::permutation;
use crate::scalar::{mean_f64, sum_f64, Scalar};
use crate::scores::{accuracy, argmax, max_confidence, neg_entropy, Dataset, Rows, ScoreMatrix};

/// The six estimators, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ATC-MC")]
    AtcMc,
    #[serde(rename = "ATC-NE")]
    AtcNe,
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "DOC")]
    Doc,
    #[serde(rename = "CPC-ACC")]
    CpcAcc,
    #[serde(rename = "CPC-AC")]
    CpcAc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::AtcMc,
        Method::AtcNe,
        Method::Ac,
        Method::Doc,
        Method::CpcAcc,
        Method::CpcAc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AtcMc => "ATC-MC",
            Method::AtcNe => "ATC-NE",
            Method::Ac => "AC",
            Method::Doc => "DOC",
            Method::CpcAcc => "CPC-ACC",
            Method::CpcAc => "CPC-AC",
        }
    }

    pub fn uses_threshold(self) -> bool {
        !matches!(self, Method::Ac | Method::Doc)
    }

    pub fn uses_alpha(self) -> bool {
        matches!(self, Method::CpcAcc | Method::CpcAc)
    }

    /// Whether the method needs source labels.
    pub fn needs_source_labels(self) -> bool {
        !matches!(self, Method::Ac | Method::CpcAc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// Serde adapter for thresholds, which may be `-inf`.
mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<T: Scalar, S: Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) => {
                let x = x.as_f64();
                let repr = if x.is_finite() {
                    Repr::Num(x)
                } else if x > 0.0 {
                    Repr::Tag("inf".into())
                } else if x < 0.0 {
                    Repr::Tag("-inf".into())
                } else {
                    Repr::Tag("nan".into())
                };
                s.serialize_some(&repr)
            }
        }
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Option<T>, D::Error> {
        let repr = Option::<Repr>::deserialize(d)?;
        Ok(repr.map(|r| match r {
            Repr::Num(x) => T::of_f64(x),
            Repr::Tag(t) => match t.as_str() {
                "inf" => T::infinity(),
                "-inf" => T::neg_infinity(),
                _ => T::nan(),
            },
        }))
    }
}

/// One estimator's result and the intermediate quantities it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EstimatorOutput<T = f64> {
    pub method: Method,
    pub estimate: T,
    /// ATC threshold `t` or conformal threshold `t_hat`.
    #[serde(with = "threshold_repr", default)]
    pub threshold: Option<T>,
    pub alpha: Option<T>,
    pub temperature: Option<T>,
    pub source_accuracy: Option<T>,
    /// Set when the raw estimate fell outside `[0, 1]` and was clamped.
    #[serde(default)]
    pub clamped: bool,
    /// Number of target rows whose conformal prediction set was empty.
    pub empty_set_fallbacks: Option<usize>,
}

impl<T: Scalar> EstimatorOutput<T> {
    fn new(method: Method, estimate: T) -> Self {
        Self {
            method,
            estimate,
            threshold: None,
            alpha: None,
            temperature: None,
            source_accuracy: None,
            clamped: false,
            empty_set_fallbacks: None,
        }
    }

    pub fn with_temperature(mut self, temperature: Option<T>) -> Self {
        self.temperature = temperature;
        self
    }
}

/// Score function used by ATC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtcScore {
    MaxConfidence,
    NegEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtcConfig {
    pub score_fn: AtcScore,
}

impl AtcConfig {
    pub const MC: AtcConfig = AtcConfig { score_fn: AtcScore::MaxConfidence };
    pub const NE: AtcConfig = AtcConfig { score_fn: AtcScore::NegEntropy };

    fn scores<T: Scalar>(&self, m: &ScoreMatrix<T>) -> Vec<T> {
        match self.score_fn {
            AtcScore::MaxConfidence => max_confidence(m),
            AtcScore::NegEntropy => neg_entropy(m),
        }
    }

    fn method(&self) -> Method {
        match self.score_fn {
            AtcScore::MaxConfidence => Method::AtcMc,
            AtcScore::NegEntropy => Method::AtcNe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DocConfig {
    pub signed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CpcVariant {
    /// `alpha` = source accuracy.
    Acc,
    /// `alpha` = target average confidence.
    Ac,
}

fn check_classes<T>(source: &ScoreMatrix<T>, target: &ScoreMatrix<T>) -> Result<()> {
    if source.n_classes() != target.n_classes() {
        return Err(Error::ClassCountMismatch {
            source_classes: source.n_classes(),
            target_classes: target.n_classes(),
        });
    }
    Ok(())
}

fn average_confidence<T: Scalar>(m: &ScoreMatrix<T>) -> f64 {
    mean_f64(&max_confidence(m))
}

/// Average confidence: mean of per-row max-probability.
pub fn estimate_ac<T: Scalar>(target: &ScoreMatrix<T>) -> EstimatorOutput<T> {
    EstimatorOutput::new(Method::Ac, T::of_f64(average_confidence(target)))
}

/// Difference of confidence.
pub fn estimate_doc<T: Scalar>(
    source: &Dataset<ScoreMatrix<T>>,
    target: &ScoreMatrix<T>,
    cfg: DocConfig,
) -> Result<EstimatorOutput<T>> {
    check_classes(source.scores(), target)?;
    let acc = accuracy(source)?;
    let gap = average_confidence(target) - average_confidence(source.scores());
    let gap = if cfg.signed { gap } else { gap.abs() };
    let raw = acc.as_f64() + gap;
    let estimate = raw.clamp(0.0, 1.0);
    let mut out = EstimatorOutput::new(Method::Doc, T::of_f64(estimate));
    out.clamped = estimate != raw;
    out.source_accuracy = Some(acc);
    Ok(out)
}

/// ATC threshold: with `a` the source accuracy and `k = m - round(a * m)`, the
/// `k`-th smallest source score, or `-inf` when `k = 0`.
pub fn select_atc_threshold<T: Scalar>(source: &Dataset<ScoreMatrix<T>>, cfg: AtcConfig) -> Result<T> {
    let acc = accuracy(source)?;
    Ok(atc_threshold_at(&cfg.scores(source.scores()), acc))
}

fn atc_threshold_at<T: Scalar>(source_scores: &[T], acc: T) -> T {
    let m = source_scores.len();
    let above = (acc.as_f64() * m as f64).round_ties_even() as usize;
    let k = m.saturating_sub(above);
    if k == 0 {
        return T::neg_infinity();
    }
    let mut sorted = source_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    sorted[k - 1]
}

fn fraction_above<T: Scalar>(scores: &[T], t: T) -> f64 {
    scores.iter().filter(|&&s| s > t).count() as f64 / scores.len() as f64
}

/// Average thresholded confidence.
pub fn estimate_atc<T: Scalar>(
    source: &Dataset<ScoreMatrix<T>>,
    target: &ScoreMatrix<T>,
    cfg: AtcConfig,
) -> Result<EstimatorOutput<T>> {
    check_classes(source.scores(), target)?;
    let acc = accuracy(source)?;
    let t = atc_threshold_at(&cfg.scores(source.scores()), acc);
    let mut out = EstimatorOutput::new(cfg.method(), T::of_f64(fraction_above(&cfg.scores(target), t)));
    out.threshold = Some(t);
    out.source_accuracy = Some(acc);
    Ok(out)
}

/// Conformal prediction confidence, calibrating on the whole source set.
pub fn estimate_cpc<T: Scalar>(
    source: &Dataset<ScoreMatrix<T>>,
    target: &ScoreMatrix<T>,
    variant: CpcVariant,
) -> Result<EstimatorOutput<T>> {
    estimate_cpc_calibrated(source, source.scores(), target, variant)
}

/// Conformal prediction confidence with separate accuracy and calibration
/// sets. `accuracy_set` supplies `alpha` for [`CpcVariant::Acc`] and may be
/// unlabeled for [`CpcVariant::Ac`].
pub fn estimate_cpc_calibrated<T: Scalar>(
    accuracy_set: &Dataset<ScoreMatrix<T>>,
    calibration: &ScoreMatrix<T>,
    target: &ScoreMatrix<T>,
    variant: CpcVariant,
) -> Result<EstimatorOutput<T>> {
    check_classes(calibration, target)?;
    check_classes(accuracy_set.scores(), target)?;
    let (method, alpha, source_accuracy) = match variant {
        CpcVariant::Acc => {
            if !accuracy_set.has_labels() {
                return Err(Error::MissingLabels("CPC-ACC needs labeled source data"));
            }
            let acc = accuracy(accuracy_set)?;
            (Method::CpcAcc, acc, Some(acc))
        }
        CpcVariant::Ac => (Method::CpcAc, estimate_ac(target).estimate, None),
    };
    let cal = conformal_threshold(&max_confidence(calibration), alpha)?;
    let (estimate, fallbacks) = cpc_mean(target, cal.t_hat);
    let mut out = EstimatorOutput::new(method, T::of_f64(estimate));
    out.threshold = Some(cal.t_hat);
    out.alpha = Some(alpha);
    out.source_accuracy = source_accuracy;
    out.empty_set_fallbacks = Some(fallbacks);
    Ok(out)
}

/// Mean over rows of the average probability inside each prediction set, and
/// the number of rows that fell back to the argmax singleton.
pub fn cpc_mean<T: Scalar>(target: &ScoreMatrix<T>, t_hat: T) -> (f64, usize) {
    let mut total = 0.0f64;
    let mut fallbacks = 0;
    for row in target.rows() {
        let mut set = prediction_set(row, t_hat);
        if set.is_empty() {
            fallbacks += 1;
            set.push(argmax(row));
        }
        total += sum_f64(set.iter().map(|&j| row[j])) / set.len() as f64;
    }
    (total / target.n_rows() as f64, fallbacks)
}

/// Options shared by every estimator in a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorOptions {
    pub doc: DocConfig,
}

/// Source data split into the part used for accuracy-based statistics and the
/// part used for conformal calibration.
#[derive(Debug, Clone)]
pub struct SourceSplit<T: Scalar = f64> {
    pub accuracy: Dataset<ScoreMatrix<T>>,
    pub calibration: ScoreMatrix<T>,
}

/// Row indices for a calibration split of `m` rows. A fraction of `1.0` uses
/// every row for both roles and returns `None`. Otherwise a seeded permutation
/// puts `clamp(round(fraction * m), 1, m - 1)` rows in the calibration part and
/// the rest in the accuracy part.
pub fn split_indices(m: usize, fraction: f64, seed: u64) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "calibration fraction {fraction} is outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(None);
    }
    if m < 2 {
        return Err(Error::InvalidConfig(
            "a calibration split needs at least two source rows".into(),
        ));
    }
    let n_cal = ((fraction * m as f64).round() as usize).clamp(1, m - 1);
    let order = permutation(m, seed, SPLIT_STREAM);
    let (cal, acc) = order.split_at(n_cal);
    Ok(Some((acc.to_vec(), cal.to_vec())))
}

const SPLIT_STREAM: u64 = 0x0053_504c_4954;

impl<T: Scalar> SourceSplit<T> {
    pub fn new(source: &Dataset<ScoreMatrix<T>>, fraction: f64, seed: u64) -> Result<Self> {
        let m = source.scores().n_rows();
        Ok(match split_indices(m, fraction, seed)? {
            None => Self { accuracy: source.clone(), calibration: source.scores().clone() },
            Some((acc_idx, cal_idx)) => {
                let scores = source.scores().select_rows(&acc_idx);
                let accuracy = match source.label_slice() {
                    Some(l) => Dataset::labeled(scores, acc_idx.iter().map(|&i| l[i]).collect())?,
                    None => Dataset::unlabeled(scores),
                };
                Self { accuracy, calibration: source.scores().select_rows(&cal_idx) }
            }
        })
    }
}

/// Runs a single method.
pub fn estimate<T: Scalar>(
    method: Method,
    source: &SourceSplit<T>,
    target: &ScoreMatrix<T>,
    opts: &EstimatorOptions,
) -> Result<EstimatorOutput<T>> {
    match method {
        Method::Ac => {
            check_classes(source.accuracy.scores(), target)?;
            Ok(estimate_ac(target))
        }
        Method::Doc => estimate_doc(&source.accuracy, target, opts.doc),
        Method::AtcMc => estimate_atc(&source.accuracy, target, AtcConfig::MC),
        Method::AtcNe => estimate_atc(&source.accuracy, target, AtcConfig::NE),
        Method::CpcAcc => {
            estimate_cpc_calibrated(&source.accuracy, &source.calibration, target, CpcVariant::Acc)
        }
        Method::CpcAc => {
            estimate_cpc_calibrated(&source.accuracy, &source.calibration, target, CpcVariant::Ac)
        }
    }
}
