use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },

    #[error("exercise `{exercise}` has inconsistent KC sets across rows ({first:?} vs {second:?})")]
    InconsistentKcs {
        exercise: String,
        first: Vec<String>,
        second: Vec<String>,
    },

    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} `{key}`")]
    UnknownKey { kind: &'static str, key: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("malformed subgraph: {0}")]
    MalformedSubgraph(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    #[error("checkpoint tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorMismatch {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Whether the error stems from user input (bad data, config or
    /// arguments) as opposed to an internal failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Shape { .. } | Error::Json(_))
    }
}
