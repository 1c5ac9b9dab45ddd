use thiserror::Error;

use crate::training::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("state is not normalized (norm {norm})")]
    Normalization { norm: f64 },
    #[error("resource cap exceeded: {what} = {value} > {limit}")]
    Resource {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("hermiticity violation: imaginary residue {residue:e}")]
    Hermiticity { residue: f64 },
    #[error("divergence at step {step}: |epsilon| = {epsilon:e} exceeds 10x initial {initial:e}")]
    Divergence {
        step: usize,
        epsilon: f64,
        initial: f64,
        partial: Box<Trajectory>,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("fit quality: relative residual {ratio:.3} exceeds 0.5")]
    FitQuality { ratio: f64 },
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            msg: msg.into(),
        }
    }
}
