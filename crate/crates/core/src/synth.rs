//! Synthetic source/target logits with known ground truth.
//!
//! Per sample `i`: draw `y` from the class prior, draw
//! `z_j = margin * [j == y] + noise * N(0, 1)`, then with probability
//! `label_noise` replace `y` by a uniformly chosen other class (logits stay).
//! The emitted logits are `gen_temperature * z`, so `softmax(emitted / gen_temperature)`
//! recovers `softmax(z)`.
//!
//! `softmax(z)` is the Bayes posterior under a uniform prior when
//! `margin == noise^2`; in that case temperature scaling recovers
//! `gen_temperature`. Smaller margins relative to `noise^2` give overconfident
//! logits.
//!
//! Randomness comes from [`CounterRng`] keyed by `(seed, stream)` with the
//! sample index as counter: source uses stream 0 and target stream 1. Draw
//! layout per sample: 0 = class, 1 = label-noise coin, 2 = replacement class,
//! `3 + 2j` and `4 + 2j` = Box-Muller pair for the noise on class `j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scores::{correct_count, Dataset, LogitMatrix};

const SOURCE_STREAM: u64 = 0;
const TARGET_STREAM: u64 = 1;

/// Parameters for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub n: usize,
    pub prior: Vec<f64>,
    pub margin: f64,
    pub noise: f64,
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k: usize,
    pub source: DomainConfig,
    pub target: DomainConfig,
    pub gen_temperature: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Two classes; the source is calibrated (`margin = noise^2 = 1`) and the
    /// target has twice the logit noise, which lowers its accuracy.
    fn default() -> Self {
        let mut cfg = Self::no_shift(2, 5000, 1.0, 1.0, 0);
        cfg.target.noise = 2.0;
        cfg
    }
}

impl SynthConfig {
    /// Identical source and target domains with a uniform prior.
    pub fn no_shift(k: usize, n: usize, margin: f64, noise: f64, seed: u64) -> Self {
        let domain = DomainConfig {
            n,
            prior: vec![1.0 / k as f64; k],
            margin,
            noise,
            label_noise: 0.0,
        };
        Self { k, source: domain.clone(), target: domain, gen_temperature: 1.0, seed }
    }

    /// Overconfident two-class model (temperature scaling finds `T` near 2)
    /// whose target domain has twice the source logit noise.
    pub fn overconfident_shift(n: usize, seed: u64) -> Self {
        let mut cfg = Self::no_shift(2, n, 1.0, 2.0, seed);
        cfg.target.noise = 4.0;
        cfg.gen_temperature = 0.5;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k < 2 {
            return bad(format!("need at least two classes, got {}", self.k));
        }
        if !(self.gen_temperature.is_finite() && self.gen_temperature > 0.0) {
            return bad(format!("gen_temperature {} must be positive", self.gen_temperature));
        }
        for (name, d) in [("source", &self.source), ("target", &self.target)] {
            if d.n == 0 {
                return bad(format!("{name}: sample count must be at least 1"));
            }
            if d.prior.len() != self.k {
                return bad(format!("{name}: prior has {} entries, expected {}", d.prior.len(), self.k));
            }
            if d.prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return bad(format!("{name}: prior entries must be non-negative"));
            }
            let sum: f64 = d.prior.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("{name}: prior sums to {sum}"));
            }
            if !d.margin.is_finite() {
                return bad(format!("{name}: margin must be finite"));
            }
            if !(d.noise.is_finite() && d.noise > 0.0) {
                return bad(format!("{name}: noise must be positive"));
            }
            if !(0.0..=0.5).contains(&d.label_noise) {
                return bad(format!("{name}: label noise must lie in [0, 0.5]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub source: Dataset<LogitMatrix<f64>>,
    /// Target labels are kept for evaluation only.
    pub target: Dataset<LogitMatrix<f64>>,
    pub true_source_accuracy: f64,
    pub true_target_accuracy: f64,
}

fn draw_class(prior: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (j, p) in prior.iter().enumerate() {
        cum += p;
        if u < cum {
            return j;
        }
    }
    // u landed in the rounding gap above the last cumulative sum
    prior.iter().rposition(|&p| p > 0.0).unwrap_or(prior.len() - 1)
}

fn generate_domain(k: usize, d: &DomainConfig, scale: f64, rng: CounterRng) -> Result<Dataset<LogitMatrix<f64>>> {
    let mut logits = Vec::with_capacity(d.n * k);
    let mut labels = Vec::with_capacity(d.n);
    for i in 0..d.n as u64 {
        let y = draw_class(&d.prior, rng.uniform(i, 0));
        for j in 0..k {
            let z = if j == y { d.margin } else { 0.0 } + d.noise * rng.normal(i, 3 + 2 * j as u64);
            logits.push(scale * z);
        }
        let label = if rng.uniform(i, 1) < d.label_noise {
            let r = rng.below(i, 2, k - 1);
            if r < y {
                r
            } else {
                r + 1
            }
        } else {
            y
        };
        labels.push(label);
    }
    Dataset::labeled(LogitMatrix::from_flat(d.n, k, logits)?, labels)
}

fn accuracy_of(data: &Dataset<LogitMatrix<f64>>) -> Result<f64> {
    Ok(correct_count(data)? as f64 / data.label_slice().map_or(1, <[usize]>::len) as f64)
}

/// Generates source and target sets. Same config and seed give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let source = generate_domain(
        cfg.k,
        &cfg.source,
        cfg.gen_temperature,
        CounterRng::new(cfg.seed, SOURCE_STREAM),
    )?;
    let target = generate_domain(
        cfg.k,
        &cfg.target,
        cfg.gen_temperature,
        CounterRng::new(cfg.seed, TARGET_STREAM),
    )?;
    Ok(SynthOutput {
        true_source_accuracy: accuracy_of(&source)?,
        true_target_accuracy: accuracy_of(&target)?,
        source,
        target,
    })
}
