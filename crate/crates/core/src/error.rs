use thiserror::Error;

/// Errors returned by the solvers, verifiers and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("no equilibrium found: {0}")]
    NotFound(String),

    #[error("solver failure after {rounds} rounds: {message}")]
    SolverFailure { rounds: usize, message: String },

    #[error("internal consistency violation: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
