use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the audit pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("sensitive attribute `{0}` not present in dataset")]
    MissingAttribute(String),

    #[error("all rows dropped during preprocessing")]
    EmptyAfterPreprocess,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("no finite privacy bound on the order grid; increase noise or reduce steps")]
    NoFiniteEpsilon,

    #[error("target epsilon {target} unreachable for noise multipliers in [{low}, {high}]")]
    Unreachable { target: f64, low: f64, high: f64 },

    #[error("exact Shapley enumeration supports at most 15 features, got {0}")]
    TooManyFeatures(usize),

    #[error("missing baseline run for {0}")]
    MissingBaseline(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
