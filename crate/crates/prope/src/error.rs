//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between operands; names both shapes.
    #[error("{op}: dimension mismatch: {lhs:?} vs {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular: {0}")]
    Singular(String),

    /// Geometric degeneracy (point on the camera plane, zero-length ray, ...).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Invalid configuration, rejected before any work starts.
    #[error("config: {0}")]
    Config(String),

    /// Checkpoint incompatible with the requested configuration.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// A property in the executable check suite failed.
    #[error("property failed: {0}")]
    Property(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dim {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code for the CLI: 1 validation, 2 property failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Json(_) => 3,
            Error::Property(_) => 2,
            _ => 1,
        }
    }
}
