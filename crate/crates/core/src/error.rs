use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vertex {0} has no evolution label")]
    MissingLabel(String),

    #[error("cosine similarity undefined for zero-norm embedding of vertex {0}")]
    ZeroNorm(usize),

    #[error("loss component `{0}` is not finite")]
    NonFinite(&'static str),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),

    #[error("backbone `{0}` is already registered")]
    DuplicateBackbone(String),

    #[error("unknown ablation switch `{0}`")]
    UnknownAblation(String),

    #[error("synthetic degree sequence infeasible after {0} attempts")]
    InfeasibleDegrees(usize),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

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
