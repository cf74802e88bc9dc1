use std::path::PathBuf;

use mrvm_core::model::ModelError;
use mrvm_core::DiffError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<DiffError> for Error {
    fn from(e: DiffError) -> Self {
        Error::Model(ModelError::Diff(e))
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data { path: path.into(), message: message.into() }
    }

    pub fn parse(path: impl Into<PathBuf>, e: &serde_json::Error) -> Self {
        Error::Parse { path: path.into(), line: e.line(), column: e.column(), message: e.to_string() }
    }

    /// Process exit status: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Invalid(_) => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Data { .. } => 2,
            Error::Model(ModelError::Input(_)) => 1,
            Error::Model(_) | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
