use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("propensity must lie in (0, 1], got {0} (common support violated)")]
    NonPositivePropensity(f64),

    #[error("split `{0}` would be empty; adjust fractions or provide more rows")]
    EmptySplit(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch:?})")]
    Divergence {
        epoch: usize,
        last_finite_epoch: Option<usize>,
    },

    #[error("unknown algorithm `{0}`; valid tags are ponn_b, ponn, poem_b, poem, logging")]
    UnknownAlgorithm(String),

    #[error("missing hidden reward table: {0}")]
    MissingRewards(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
