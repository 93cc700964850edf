use thiserror::Error;

use crate::solver::Trace;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested sublevel set has no closed-form Euclidean projection.
    #[error("unsupported projection: {0}")]
    UnsupportedProjection(String),

    /// An iterate became non-finite or left the divergence guard radius.
    /// The partial trace up to the offending iteration is attached.
    #[error("iteration diverged at tau = {tau}")]
    Diverged { tau: usize, trace: Box<Trace> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return invalid(format!(
            "{what}: length {got} does not match expected {expected}"
        ));
    }
    Ok(())
}
