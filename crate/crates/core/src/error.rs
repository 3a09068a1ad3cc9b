use thiserror::Error;

/// Errors raised by the solvers and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("growth violation: {0}")]
    GrowthViolation(String),
    #[error("inconsistency: {0}")]
    Inconsistency(String),
    #[error("optimizer did not converge: {message}")]
    NonConvergence { message: String, history: Vec<f64> },
    #[error("field file: {0}")]
    FieldFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
