use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LcError>;

#[derive(Debug, Error)]
pub enum LcError {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("duplicate unit id {0}")]
    DuplicateId(u64),

    #[error("no units survive missing-value filtering")]
    NoUnits,

    #[error("variable `{0}` has missing values")]
    MissingValues(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },

    #[error("correlation undefined: constant input")]
    UndefinedCorrelation,

    #[error("variable `{0}` is constant")]
    ConstantVariable(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("distance matrix contains a non-finite or negative value at position {0}")]
    InvalidDistance(usize),

    #[error("unknown linkage method `{0}`")]
    UnknownMethod(String),

    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("cluster sizes sum to {sum}, expected {n}")]
    SizeMismatch { sum: usize, n: usize },

    #[error("invalid cluster assignment: {0}")]
    Assignment(String),

    #[error("empty input")]
    Empty,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed report file {path}: {reason}")]
    Report { path: PathBuf, reason: String },
}

impl LcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LcError::Io {
            path: path.into(),
            source,
        }
    }
}
