use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("{0}")]
    InvalidInput(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("vocabulary fingerprint mismatch: checkpoint has {expected}, data has {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("label set mismatch: {0}")]
    LabelMismatch(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Tensor(#[from] ndgrad::GradError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidInput(_) | Error::Tensor(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

/// Lets model losses be passed straight to the finite-difference checker.
impl From<Error> for ndgrad::GradError {
    fn from(e: Error) -> Self {
        match e {
            Error::Tensor(t) => t,
            other => ndgrad::GradError::InvalidArgument {
                op: "model",
                msg: other.to_string(),
            },
        }
    }
}
