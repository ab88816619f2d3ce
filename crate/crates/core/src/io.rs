//! Prediction files.
//!
//! Comma-separated UTF-8 text. The header names the columns: an optional
//! leading `label` column, then `p0..p{K-1}` for probabilities or
//! `l0..l{K-1}` for logits. Each data row has exactly one field per header
//! column. Values are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{Dataset, LogitMatrix, Rows, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Probabilities,
    Logits,
}

impl ScoreKind {
    fn prefix(self) -> char {
        match self {
            ScoreKind::Probabilities => 'p',
            ScoreKind::Logits => 'l',
        }
    }
}

/// Header-level description of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionFile {
    pub path: PathBuf,
    pub kind: ScoreKind,
    pub has_labels: bool,
    pub n: usize,
    pub k: usize,
}

/// Contents of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Probabilities(Dataset<ScoreMatrix<f64>>),
    Logits(Dataset<LogitMatrix<f64>>),
}

impl Predictions {
    pub fn kind(&self) -> ScoreKind {
        match self {
            Predictions::Probabilities(_) => ScoreKind::Probabilities,
            Predictions::Logits(_) => ScoreKind::Logits,
        }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            Predictions::Probabilities(d) => d.scores().n_rows(),
            Predictions::Logits(d) => d.scores().n_rows(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Predictions::Probabilities(d) => d.scores().n_classes(),
            Predictions::Logits(d) => d.scores().n_classes(),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Predictions::Probabilities(d) => d.label_slice(),
            Predictions::Logits(d) => d.label_slice(),
        }
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

fn parse_header(line: &str) -> Result<(ScoreKind, bool, usize)> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    let has_labels = cols.first() == Some(&"label");
    let score_cols = &cols[usize::from(has_labels)..];
    let offset = usize::from(has_labels) + 1;
    let kind = match score_cols.first().and_then(|c| c.chars().next()) {
        Some('p') => ScoreKind::Probabilities,
        Some('l') => ScoreKind::Logits,
        _ => return Err(parse_err(1, offset, "expected score columns p0.. or l0..")),
    };
    for (j, name) in score_cols.iter().enumerate() {
        if *name != format!("{}{j}", kind.prefix()) {
            return Err(parse_err(
                1,
                offset + j,
                format!("expected column '{}{j}', found '{name}'", kind.prefix()),
            ));
        }
    }
    Ok((kind, has_labels, score_cols.len()))
}

/// Parses prediction-file text. `expected`, when given, must match the kind
/// declared by the header. `renormalize` applies to probability rows.
pub fn parse_predictions(text: &str, expected: Option<ScoreKind>, renormalize: bool) -> Result<Predictions> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, 1, "missing header"))?;
    let (kind, has_labels, k) = parse_header(header)?;
    if let Some(e) = expected {
        if e != kind {
            return Err(parse_err(1, 1, format!("expected {e:?} columns, header declares {kind:?}")));
        }
    }
    let width = k + usize::from(has_labels);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(parse_err(
                lineno,
                fields.len().min(width) + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut rest = &fields[..];
        if has_labels {
            let label = rest[0]
                .parse::<usize>()
                .map_err(|_| parse_err(lineno, 1, format!("invalid label '{}'", rest[0])))?;
            if label >= k {
                return Err(Error::LabelOutOfRange { row: labels.len(), label, classes: k });
            }
            labels.push(label);
            rest = &rest[1..];
        }
        for (j, f) in rest.iter().enumerate() {
            let v = f.parse::<f64>().map_err(|_| {
                parse_err(lineno, j + 1 + usize::from(has_labels), format!("invalid number '{f}'"))
            })?;
            values.push(v);
        }
    }
    let n = values.len() / k;
    if n == 0 {
        return Err(parse_err(2, 1, "no data rows"));
    }
    let labels = has_labels.then_some(labels);
    Ok(match kind {
        ScoreKind::Probabilities => {
            let m = ScoreMatrix::from_flat(n, k, values, renormalize)?;
            Predictions::Probabilities(attach(m, labels)?)
        }
        ScoreKind::Logits => Predictions::Logits(attach(LogitMatrix::from_flat(n, k, values)?, labels)?),
    })
}

fn attach<M: Rows<f64>>(m: M, labels: Option<Vec<usize>>) -> Result<Dataset<M>> {
    match labels {
        Some(l) => Dataset::labeled(m, l),
        None => Ok(Dataset::unlabeled(m)),
    }
}

pub fn read_predictions(path: &Path, expected: Option<ScoreKind>, renormalize: bool) -> Result<Predictions> {
    let text = fs::read_to_string(path)?;
    parse_predictions(&text, expected, renormalize)
}

/// Reads only enough of a file to describe it.
pub fn describe(path: &Path) -> Result<PredictionFile> {
    let p = read_predictions(path, None, true)?;
    Ok(PredictionFile {
        path: path.to_path_buf(),
        kind: p.kind(),
        has_labels: p.labels().is_some(),
        n: p.n_rows(),
        k: p.n_classes(),
    })
}

pub fn format_predictions<M: Rows<f64>>(data: &Dataset<M>, kind: ScoreKind) -> String {
    let k = data.scores().n_classes();
    let mut out = String::new();
    let labels = data.label_slice();
    let mut header: Vec<String> = Vec::with_capacity(k + 1);
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..k).map(|j| format!("{}{j}", kind.prefix())));
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in data.scores().rows().enumerate() {
        if let Some(l) = labels {
            let _ = write!(out, "{},", l[i]);
        }
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_predictions<M: Rows<f64>>(path: &Path, data: &Dataset<M>, kind: ScoreKind) -> Result<()> {
    fs::write(path, format_predictions(data, kind))?;
    Ok(())
}
