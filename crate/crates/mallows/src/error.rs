use thiserror::Error;

/// Errors reported by the evaluators, samplers and simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("ordering violation: {0}")]
    Ordering(String),
    #[error("duplicate value {0}")]
    DuplicateValue(i64),
    #[error("truncation exhausted after {terms} terms (tail bound {tail:e})")]
    Truncation { terms: usize, tail: f64 },
    #[error("tail bound {tail:e} exceeds tolerance {tol:e}")]
    TailBound { tail: f64, tol: f64 },
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("support condition fails at cut {index}")]
    SupportMismatch { index: usize },
    #[error("insufficient occupation time at x = {x}")]
    Insufficient { x: i64 },
}

pub type Result<T> = std::result::Result<T, Error>;
