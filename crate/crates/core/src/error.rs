use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Violations of a checked inequality are not errors; they are reported as
/// data in the corresponding report types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("non-finite state encountered at t = {t}")]
    NumericOverflow { t: f64 },

    #[error("quadrature did not converge on [{a}, {b}] (error estimate {error:e})")]
    QuadratureFailure { a: f64, b: f64, error: f64 },

    #[error("dichotomy estimation failed: {0}")]
    EstimationFailure(String),

    #[error("contraction violated: theta1 = {theta1} is not below 1")]
    ContractionViolated { theta1: f64 },

    #[error("hypothesis violated: {what} = {value}")]
    HypothesisViolated { what: String, value: f64 },

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    ConvergenceFailure { iterations: usize, last_change: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
