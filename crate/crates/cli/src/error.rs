use std::path::PathBuf;

use pifnet::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pifnet::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 shape, 4 I/O, 5 numerical,
    /// 6 invalid data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Shape => 3,
                ErrorKind::Io => 4,
                ErrorKind::Numerical => 5,
                ErrorKind::Data => 6,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
