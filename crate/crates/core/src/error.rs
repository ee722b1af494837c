use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Shape,
    Io,
    Numerical,
    Data,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("missing gradient for parameter {0}")]
    MissingGradient(usize),
    #[error("missing recorded activations: {0}")]
    MissingActivation(String),
    #[error("index out of range: {0}")]
    InvalidIndex(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("volume format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape(_) => ErrorKind::Shape,
            Error::Config(_) | Error::InvalidIndex(_) => ErrorKind::Config,
            Error::NonFinite(_)
            | Error::NotScalar(_)
            | Error::GraphConsumed
            | Error::MissingGradient(_)
            | Error::MissingActivation(_) => ErrorKind::Numerical,
            Error::Data(_) => ErrorKind::Data,
            Error::Format { .. } | Error::Io { .. } | Error::Serde(_) => ErrorKind::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
