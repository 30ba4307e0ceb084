use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mesh: {element} {index}: {reason}")]
    InvalidMesh {
        element: &'static str,
        index: usize,
        reason: String,
    },

    #[error("numeric error in triangle {triangle}: {reason}")]
    Numeric { triangle: usize, reason: String },

    #[error("heat kernel underflow at vertex {vertex}: {detail}")]
    Underflow { vertex: usize, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
