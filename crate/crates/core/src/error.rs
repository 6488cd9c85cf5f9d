use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition on the caller's input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration document failed schema validation.
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    /// An iterative method did not converge.
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    /// A trajectory or linear solve produced a non-finite or impossible value.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Root search could not find a sign change.
    #[error("no sign change of the principal eigenvalue in [{lo}, {hi}]; widen the search bracket")]
    NoSignChange { lo: f64, hi: f64 },

    /// A self-check on computed quantities failed. Indicates a bug or a malformed input.
    #[error("internal consistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<S: Into<String>>(msg: S) -> Error {
    Error::InvalidInput(msg.into())
}
