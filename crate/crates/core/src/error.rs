use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("probability {value} at row {row}, column {col} is outside [0, 1]")]
    ValueOutOfRange { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to {sum}, expected 1 within 1e-4")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("class count mismatch: source has {source_classes}, target has {target_classes}")]
    ClassCountMismatch {
        source_classes: usize,
        target_classes: usize,
    },

    #[error("labels required: {0}")]
    MissingLabels(&'static str),

    #[error("label {label} at row {row} is outside [0, {classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration errors, 1 for
    /// everything that originates in the input data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            _ => 1,
        }
    }
}
