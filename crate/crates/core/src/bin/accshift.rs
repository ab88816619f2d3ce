use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use accshift::calibration::fit_temperature;
use accshift::io::{read_predictions, write_predictions, Predictions, ScoreKind};
use accshift::report::{render_aggregate, render_report, run_estimate, run_synth_evaluation, EstimateOptions, OutputFormat};
use accshift::synth::{generate, DomainConfig, SynthConfig};
use accshift::{Error, Method, Result};

#[derive(Parser)]
#[command(name = "accshift", version, about = "Estimate classifier accuracy on unlabeled data from prediction scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run estimators on a source/target pair of prediction files, or on
    /// generated data with --synth.
    Estimate(EstimateArgs),
    /// Write synthetic source and target logit files plus a truth sidecar.
    Synth(SynthCmd),
    /// Fit a temperature on a labeled source file and print it.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Labeled source predictions.
    #[arg(long, required_unless_present = "synth")]
    source: Option<PathBuf>,
    /// Target predictions; labels, if present, are used only for scoring.
    #[arg(long, required_unless_present = "synth")]
    target: Option<PathBuf>,
    /// Estimator to run; repeat or use "all". Comma-separated lists work too.
    #[arg(long = "method", default_value = "all", value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    temperature_scale: bool,
    /// Use the signed confidence difference in DOC.
    #[arg(long)]
    doc_signed: bool,
    /// Share of source rows used for conformal calibration and temperature fitting.
    #[arg(long, default_value_t = 1.0)]
    cal_fraction: f64,
    /// Renormalize probability rows that miss the row-sum tolerance.
    #[arg(long)]
    renormalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    output: OutputFormat,
    /// Generate source and target instead of reading files.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    synth: bool,
    /// Number of synthetic runs (seeds seed, seed+1, ...); requires --synth.
    #[arg(long, requires = "synth")]
    runs: Option<usize>,
    #[command(flatten)]
    gen: SynthArgs,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    gen: SynthArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 5000)]
    n_source: usize,
    #[arg(long, default_value_t = 5000)]
    n_target: usize,
    /// Comma-separated class prior; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    prior_source: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    prior_target: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    margin_source: f64,
    #[arg(long, default_value_t = 1.0)]
    margin_target: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_source: f64,
    #[arg(long, default_value_t = 2.0)]
    noise_target: f64,
    #[arg(long, default_value_t = 0.0)]
    label_noise_source: f64,
    #[arg(long, default_value_t = 0.0)]
    label_noise_target: f64,
    /// Factor applied to the generated logits.
    #[arg(long, default_value_t = 1.0)]
    gen_temperature: f64,
}

impl SynthArgs {
    fn config(&self, seed: u64) -> SynthConfig {
        let uniform = vec![1.0 / self.classes.max(1) as f64; self.classes];
        let domain = |n, prior: &Option<Vec<f64>>, margin, noise, label_noise| DomainConfig {
            n,
            prior: prior.clone().unwrap_or_else(|| uniform.clone()),
            margin,
            noise,
            label_noise,
        };
        SynthConfig {
            k: self.classes,
            source: domain(self.n_source, &self.prior_source, self.margin_source, self.noise_source, self.label_noise_source),
            target: domain(self.n_target, &self.prior_target, self.margin_target, self.noise_target, self.label_noise_target),
            gen_temperature: self.gen_temperature,
            seed,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    source: PathBuf,
    /// Allow probability files by fitting on ln(p + 1e-12).
    #[arg(long)]
    recover_logits: bool,
    #[arg(long)]
    renormalize: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    output: OutputFormat,
}

fn parse_methods(raw: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for m in raw {
        if m.trim().eq_ignore_ascii_case("all") {
            out.extend(Method::ALL);
        } else {
            out.push(m.parse()?);
        }
    }
    Ok(out)
}

fn estimate(args: EstimateArgs) -> Result<String> {
    let opts = EstimateOptions {
        methods: parse_methods(&args.methods)?,
        temperature_scale: args.temperature_scale,
        doc_signed: args.doc_signed,
        cal_fraction: args.cal_fraction,
        seed: args.seed,
    };
    if args.synth {
        let cfg = args.gen.config(args.seed);
        let agg = run_synth_evaluation(&cfg, args.runs.unwrap_or(1), &opts)?;
        if args.runs.is_none() {
            return render_report(&agg.reports[0], args.output);
        }
        return render_aggregate(&agg, args.output);
    }
    let (Some(source), Some(target)) = (args.source, args.target) else {
        return Err(Error::InvalidConfig("--source and --target are required".into()));
    };
    let source = read_predictions(&source, None, args.renormalize)?;
    let target = read_predictions(&target, None, args.renormalize)?;
    render_report(&run_estimate(source, target, &opts)?, args.output)
}

fn synth(args: SynthCmd) -> Result<String> {
    let cfg = args.gen.config(args.seed);
    let out = generate(&cfg)?;
    fs::create_dir_all(&args.out_dir)?;
    let source_path = args.out_dir.join("source.csv");
    let target_path = args.out_dir.join("target.csv");
    let truth_path = args.out_dir.join("truth.json");
    write_predictions(&source_path, &out.source, ScoreKind::Logits)?;
    write_predictions(&target_path, &out.target, ScoreKind::Logits)?;
    let truth = serde_json::json!({
        "seed": cfg.seed,
        "config": cfg,
        "true_source_accuracy": out.true_source_accuracy,
        "true_target_accuracy": out.true_target_accuracy,
    });
    fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")?;
    Ok(format!(
        "wrote {}, {}, {}\nsource accuracy {:.4}, target accuracy {:.4}\n",
        source_path.display(),
        target_path.display(),
        truth_path.display(),
        out.true_source_accuracy,
        out.true_target_accuracy
    ))
}

fn calibrate(args: CalibrateArgs) -> Result<String> {
    let logits = match read_predictions(&args.source, None, args.renormalize)? {
        Predictions::Logits(d) => d,
        Predictions::Probabilities(_) if !args.recover_logits => {
            return Err(Error::InvalidConfig(
                "probability file given; pass --recover-logits to fit on ln(p)".into(),
            ))
        }
        Predictions::Probabilities(d) => d.map_scores(|m| Ok(accshift::calibration::recover_logits(&m)))?,
    };
    let fit = fit_temperature(&logits)?;
    if fit.degenerate {
        eprintln!("warning: every logit row is constant; NLL does not depend on the temperature, using 1");
    }
    Ok(match args.output {
        OutputFormat::Json => serde_json::to_string_pretty(&fit)? + "\n",
        OutputFormat::Csv => format!(
            "temperature,nll,grid_best\n{},{},{}\n",
            fit.temperature, fit.nll, fit.grid_best
        ),
        OutputFormat::Table => format!(
            "temperature: {:.6}\nnll: {:.6}\ngrid_best: {:.6}\n",
            fit.temperature, fit.nll, fit.grid_best
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
