use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter violates a construction invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Wealth is at or above the threshold where the value function is flat.
    #[error("wealth {x} is at or above the threshold {x_star}")]
    AboveThreshold { x: f64, x_star: f64 },

    /// The quantity is not a function at this point (e.g. second derivative at maturity).
    #[error("degenerate evaluation: {0}")]
    Degenerate(String),

    /// A numerical procedure failed to converge or to bracket.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
