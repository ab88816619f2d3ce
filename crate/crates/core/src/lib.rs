//! Estimate a black-box classifier's accuracy on an unlabeled, possibly
//! shifted target set from its prediction scores alone.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the element type for the common cases; file I/O, synthetic data
//! and reports work in `f64`.

pub mod calibration;
pub mod conformal;
pub mod error;
pub mod estimators;
pub mod io;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod scores;
pub mod synth;

pub use calibration::{apply_temperature, fit_temperature, softmax, TemperatureFit};
pub use conformal::{conformal_threshold, prediction_set, quantile, ConformalCalibration};
pub use error::{Error, Result};
pub use estimators::{
    estimate_ac, estimate_atc, estimate_cpc, estimate_doc, select_atc_threshold, AtcConfig, AtcScore,
    CpcVariant, DocConfig, EstimatorOutput, Method,
};
pub use io::{read_predictions, write_predictions, PredictionFile, Predictions, ScoreKind};
pub use report::{run_estimate, run_synth_evaluation, EstimateOptions, EvaluationReport, OutputFormat};
pub use scalar::Scalar;
pub use scores::{accuracy, max_confidence, neg_entropy, validate_scores, Dataset, LogitMatrix, Rows, ScoreMatrix};
pub use synth::{generate, SynthConfig, SynthOutput};

pub type ScoreMatrix32 = ScoreMatrix<f32>;
pub type ScoreMatrix64 = ScoreMatrix<f64>;
pub type LogitMatrix32 = LogitMatrix<f32>;
pub type LogitMatrix64 = LogitMatrix<f64>;
pub type ScoreDataset32 = Dataset<ScoreMatrix<f32>>;
pub type ScoreDataset64 = Dataset<ScoreMatrix<f64>>;
pub type LogitDataset32 = Dataset<LogitMatrix<f32>>;
pub type LogitDataset64 = Dataset<LogitMatrix<f64>>;
pub type EstimatorOutput32 = EstimatorOutput<f32>;
pub type EstimatorOutput64 = EstimatorOutput<f64>;
pub type ConformalCalibration32 = ConformalCalibration<f32>;
pub type ConformalCalibration64 = ConformalCalibration<f64>;
