//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TregError {
    /// Tensor shapes are incompatible; both shapes are reported.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// A region-of-interest lies entirely outside the map it indexes.
    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    /// A caller violated an operation's stated precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value: {0}")]
    Numeric(String),

    /// Frame indices fed to the template queue must strictly increase.
    #[error("ordering violated: {0}")]
    Ordering(String),

    /// Malformed run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A required input file or directory does not exist.
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TregError>;

impl TregError {
    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        TregError::Shape {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
