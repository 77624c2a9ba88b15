use thiserror::Error;

/// Errors surfaced by problem construction, validation, and the solvers.
///
/// Solver outcomes that are legitimate results (infeasibility detected by
/// phase one, iteration limits) are reported through
/// [`SolveStatus`](crate::duality::SolveStatus), not through this type;
/// `Error` covers inputs the library refuses to process.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("problem too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("linear solve failed: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
