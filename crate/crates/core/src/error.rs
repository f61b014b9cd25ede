use thiserror::Error;

/// Errors surfaced by protocol execution, solvers, and audits.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row outside the protocol's data universe: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("enumeration budget exceeded: {0}")]
    EnumerationBudget(String),

    #[error("malformed transcript: {0}")]
    Format(String),

    #[error("estimator undefined: {0}")]
    UndefinedEstimator(String),

    #[error("threshold not calibrated; run calibrate_threshold first")]
    Uncalibrated,

    #[error("indeterminate result: {0}")]
    Indeterminate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
