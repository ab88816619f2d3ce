//! End-to-end estimation runs and their reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibration::{apply_temperature, fit_temperature, recover_logits, TemperatureFit};
use crate::error::{Error, Result};
use crate::estimators::{estimate, split_indices, DocConfig, EstimatorOptions, EstimatorOutput, Method, SourceSplit};
use crate::io::{Predictions, ScoreKind};
use crate::scores::{accuracy, Dataset, LogitMatrix, Rows, ScoreMatrix};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    /// Methods to run; reported in [`Method::ALL`] order regardless of input order.
    pub methods: Vec<Method>,
    pub temperature_scale: bool,
    pub doc_signed: bool,
    /// Share of source rows used for conformal calibration and temperature
    /// fitting. `1.0` uses every row for every purpose.
    pub cal_fraction: f64,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            temperature_scale: false,
            doc_signed: false,
            cal_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub output: EstimatorOutput<f64>,
    /// `|estimate - true_target_accuracy|`, present iff the truth is known.
    pub absolute_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub classes: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub source_kind: ScoreKind,
    pub target_kind: ScoreKind,
    pub temperature: Option<f64>,
    pub temperature_fit: Option<TemperatureFit>,
    pub calibration_fraction: f64,
    pub doc_signed: bool,
    /// Total empty conformal prediction sets across the CPC methods.
    pub empty_set_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub results: Vec<MethodResult>,
    pub true_target_accuracy: Option<f64>,
    pub metadata: RunMetadata,
}

impl EvaluationReport {
    pub fn get(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.output.method == method)
    }
}

fn to_logits(p: Predictions) -> Dataset<LogitMatrix<f64>> {
    match p {
        Predictions::Logits(d) => d,
        Predictions::Probabilities(d) => {
            let (m, labels) = d.into_parts();
            let logits = recover_logits(&m);
            match labels {
                Some(l) => Dataset::labeled(logits, l).expect("labels already validated"),
                None => Dataset::unlabeled(logits),
            }
        }
    }
}

fn to_scores(p: Predictions, temperature: f64) -> Result<Dataset<ScoreMatrix<f64>>> {
    match p {
        Predictions::Probabilities(d) if temperature == 1.0 => Ok(d),
        other => to_logits(other).map_scores(|m| apply_temperature(&m, temperature)),
    }
}

/// Fits a temperature on the calibration share of the source rows.
fn fit_on_calibration_rows(source: &Dataset<LogitMatrix<f64>>, fraction: f64, seed: u64) -> Result<TemperatureFit> {
    match split_indices(source.scores().n_rows(), fraction, seed)? {
        None => fit_temperature(source),
        Some((_, cal)) => {
            let labels = source.labels()?;
            let subset = Dataset::labeled(
                source.scores().select_rows(&cal),
                cal.iter().map(|&i| labels[i]).collect(),
            )?;
            fit_temperature(&subset)
        }
    }
}

/// Runs the selected estimators on a source/target pair.
///
/// With temperature scaling, a temperature is fit on labeled source logits
/// (recovered from probabilities when needed) and applied to both sides.
pub fn run_estimate(source: Predictions, target: Predictions, opts: &EstimateOptions) -> Result<EvaluationReport> {
    if source.n_classes() != target.n_classes() {
        return Err(Error::ClassCountMismatch {
            source_classes: source.n_classes(),
            target_classes: target.n_classes(),
        });
    }
    if opts.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    let mut methods = opts.methods.clone();
    methods.sort();
    methods.dedup();
    if source.labels().is_none() {
        if let Some(m) = methods.iter().find(|m| m.needs_source_labels()) {
            return Err(Error::MissingLabels(match m {
                Method::Doc => "DOC needs labeled source data",
                Method::CpcAcc => "CPC-ACC needs labeled source data",
                _ => "ATC needs labeled source data",
            }));
        }
    }
    // Validate the split up front so that a bad fraction is a config error
    // even when temperature scaling is off.
    split_indices(source.n_rows(), opts.cal_fraction, opts.seed)?;

    let mut metadata = RunMetadata {
        seed: opts.seed,
        classes: source.n_classes(),
        n_source: source.n_rows(),
        n_target: target.n_rows(),
        source_kind: source.kind(),
        target_kind: target.kind(),
        temperature: None,
        temperature_fit: None,
        calibration_fraction: opts.cal_fraction,
        doc_signed: opts.doc_signed,
        empty_set_fallbacks: 0,
    };

    let (source, target) = if opts.temperature_scale {
        let source_logits = to_logits(source);
        let fit = fit_on_calibration_rows(&source_logits, opts.cal_fraction, opts.seed)?;
        metadata.temperature = Some(fit.temperature);
        metadata.temperature_fit = Some(fit);
        (
            to_scores(Predictions::Logits(source_logits), fit.temperature)?,
            to_scores(target, fit.temperature)?,
        )
    } else {
        (to_scores(source, 1.0)?, to_scores(target, 1.0)?)
    };

    let split = SourceSplit::new(&source, opts.cal_fraction, opts.seed)?;
    let est_opts = EstimatorOptions { doc: DocConfig { signed: opts.doc_signed } };
    let truth = if target.has_labels() { Some(accuracy::<f64, _>(&target)?) } else { None };

    let mut results = Vec::with_capacity(methods.len());
    for m in methods {
        let output = estimate(m, &split, target.scores(), &est_opts)?.with_temperature(metadata.temperature);
        metadata.empty_set_fallbacks += output.empty_set_fallbacks.unwrap_or(0);
        let absolute_error = truth.map(|t| (output.estimate - t).abs());
        results.push(MethodResult { output, absolute_error });
    }
    Ok(EvaluationReport { results, true_target_accuracy: truth, metadata })
}

/// Mean and spread of one method's results over repeated synthetic runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub mean_estimate: f64,
    pub mean_absolute_error: f64,
    /// Sample standard deviation; absent for a single run.
    pub std_absolute_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub mean_true_target_accuracy: f64,
    pub rows: Vec<AggregateRow>,
    pub reports: Vec<EvaluationReport>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Repeats generate-then-estimate `runs` times with seeds `cfg.seed + r`.
/// The estimator split seed follows the run seed.
pub fn run_synth_evaluation(cfg: &SynthConfig, runs: usize, opts: &EstimateOptions) -> Result<AggregateReport> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let mut reports = Vec::with_capacity(runs);
    let mut seeds = Vec::with_capacity(runs);
    for r in 0..runs as u64 {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(r);
        let data = generate(&run_cfg)?;
        let run_opts = EstimateOptions { seed: run_cfg.seed, ..opts.clone() };
        reports.push(run_estimate(
            Predictions::Logits(data.source),
            Predictions::Logits(data.target),
            &run_opts,
        )?);
        seeds.push(run_cfg.seed);
    }
    let truths: Vec<f64> = reports.iter().filter_map(|r| r.true_target_accuracy).collect();
    let rows = reports[0]
        .results
        .iter()
        .map(|first| {
            let m = first.output.method;
            let estimates: Vec<f64> = reports.iter().filter_map(|r| r.get(m)).map(|r| r.output.estimate).collect();
            let errors: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.get(m).and_then(|x| x.absolute_error))
                .collect();
            AggregateRow {
                method: m,
                mean_estimate: mean(&estimates),
                mean_absolute_error: mean(&errors),
                std_absolute_error: sample_std(&errors),
            }
        })
        .collect();
    Ok(AggregateReport { runs, seeds, mean_true_target_accuracy: mean(&truths), rows, reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
    Csv,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn csv_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

pub fn render_report(report: &EvaluationReport, format: OutputFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        OutputFormat::Json => out = serde_json::to_string_pretty(report)? + "\n",
        OutputFormat::Csv => {
            out.push_str("method,estimate,truth,absolute_error\n");
            for r in &report.results {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    r.output.method,
                    r.output.estimate,
                    csv_opt(report.true_target_accuracy),
                    csv_opt(r.absolute_error)
                );
            }
        }
        OutputFormat::Table => {
            let md = &report.metadata;
            let _ = writeln!(
                out,
                "source: {} rows ({:?}), target: {} rows ({:?}), {} classes",
                md.n_source, md.source_kind, md.n_target, md.target_kind, md.classes
            );
            match md.temperature {
                Some(t) => {
                    let _ = writeln!(out, "temperature: {t:.4}");
                }
                None => out.push_str("temperature: none\n"),
            }
            if let Some(t) = report.true_target_accuracy {
                let _ = writeln!(out, "true target accuracy: {t:.4}");
            }
            let _ = writeln!(
                out,
                "{:<8} {:>9} {:>9} {:>10} {:>9}",
                "method", "estimate", "abs err", "threshold", "alpha"
            );
            for r in &report.results {
                let o = &r.output;
                let _ = writeln!(
                    out,
                    "{:<8} {:>9.4} {:>9} {:>10} {:>9}",
                    o.method.name(),
                    o.estimate,
                    opt(r.absolute_error),
                    opt(o.threshold),
                    opt(o.alpha)
                );
            }
            if md.empty_set_fallbacks > 0 {
                let _ = writeln!(out, "empty prediction sets (argmax fallback): {}", md.empty_set_fallbacks);
            }
        }
    }
    Ok(out)
}

pub fn render_aggregate(report: &AggregateReport, format: OutputFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        OutputFormat::Json => out = serde_json::to_string_pretty(report)? + "\n",
        OutputFormat::Csv => {
            out.push_str("method,mean_estimate,mean_truth,mean_absolute_error,std_absolute_error\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.method,
                    r.mean_estimate,
                    report.mean_true_target_accuracy,
                    r.mean_absolute_error,
                    csv_opt(r.std_absolute_error)
                );
            }
        }
        OutputFormat::Table => {
            let _ = writeln!(
                out,
                "{} runs, mean true target accuracy {:.4}",
                report.runs, report.mean_true_target_accuracy
            );
            let _ = writeln!(out, "{:<8} {:>9} {:>20}", "method", "estimate", "abs err (mean ± sd)");
            for r in &report.rows {
                let spread = r.std_absolute_error.map_or_else(String::new, |s| format!(" ± {:.2}%", 100.0 * s));
                let _ = writeln!(
                    out,
                    "{:<8} {:>9.4} {:>20}",
                    r.method.name(),
                    r.mean_estimate,
                    format!("{:.2}%{spread}", 100.0 * r.mean_absolute_error)
                );
            }
        }
    }
    Ok(out)
}
