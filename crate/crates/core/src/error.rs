use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("insufficient target rows: need {needed}, have {available}")]
    InsufficientTarget { needed: usize, available: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("rank correlation undefined: an input has zero rank variance")]
    ConstantInput,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("objective is non-finite after exponent clipping")]
    NonFiniteObjective,

    #[error("every sweep cell failed; first failure: {first}")]
    AllCellsFailed { first: String },

    #[error("target marginal is not representable by a tilt (residual KL {residual_kl:.3e})")]
    InfeasibleSpec { residual_kl: f64 },

    #[error("group annotations are required but absent")]
    NoGroups,

    #[error("no source samples belong to the target groups")]
    EmptyTargetGroup,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}
