use thiserror::Error;

pub type Result<T> = std::result::Result<T, GradError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("no gradient for registered parameter `{0}`")]
    MissingGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

pub(crate) fn shape_err(op: &'static str, shapes: &[&[usize]]) -> GradError {
    GradError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> GradError {
    GradError::InvalidArgument {
        op,
        msg: msg.into(),
    }
}
