use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two grids that must agree in size do not.
    #[error("shape mismatch: expected {expected:?} (h, w), found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("frame count mismatch: expected {expected}, found {found}")]
    FrameCount { expected: usize, found: usize },

    #[error("mask is empty")]
    EmptyMask,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated or oversized payload: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn missing(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::MissingInput {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
