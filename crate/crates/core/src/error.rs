use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate batch: per-example weights sum to zero")]
    DegenerateBatch,

    #[error("head row {row} has zero norm; cannot rescale with power {power}")]
    SingularRow { row: usize, power: f64 },

    #[error("group {group} is empty ({context})")]
    EmptyGroup { group: usize, context: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: malformed file: {message}")]
    Format { path: PathBuf, message: String },

    #[error("no record carries the selection criterion `{0}`")]
    MissingCriterion(&'static str),

    #[error("no checkpoint retained for epoch {0}")]
    MissingCheckpoint(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
