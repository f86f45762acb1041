//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Raised by the SPD solver; the LM loop reacts by raising its damping.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("solve residual {residual:e} exceeds bound {bound:e}")]
    IllConditioned { residual: f64, bound: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },

    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("dataset is empty after {0}")]
    EmptyDataset(&'static str),

    #[error("insufficient data: {len} rows, need more than {needed}")]
    InsufficientData { len: usize, needed: usize },

    #[error("channel `{0}` is constant; normalization bounds are degenerate")]
    DegenerateChannel(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no predictor passes |R| > {threshold} against `{target}`")]
    NoPredictors { target: String, threshold: f64 },

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("all {0} ensemble runs diverged")]
    EnsembleFailure(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model import failed at `{field}`: {message}")]
    Import { field: String, message: String },

    #[error("frame error: {0}")]
    Frame(String),

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

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn import(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Import {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
