use thiserror::Error;

/// Errors produced by design construction, randomization, estimation and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("factor count k={0} out of range (expected 1..=20)")]
    FactorCount(usize),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid pairing: {0}")]
    InvalidPairing(String),

    #[error("unit count {n} is not a positive multiple of 2^{k}")]
    UnitCount { n: usize, k: usize },

    #[error("enumeration would visit {states} assignments, exceeding the cap of {cap}")]
    CapExceeded { states: u128, cap: u64 },

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("{0}")]
    Estimator(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
