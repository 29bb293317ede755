//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration value (bad weight, infeasible generator bounds, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent data record.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values reached the optimizer or loss.
    #[error("training divergence: {0}")]
    Divergence(String),

    /// Metric is undefined on this input (single-class sample set, zero variance, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A verification oracle could not be evaluated.
    #[error("oracle failure: {0}")]
    Oracle(String),

    /// An operation that needs a non-empty selection received an empty one.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// Confidence outside (0, 1].
    #[error("invalid confidence: {0}")]
    InvalidConfidence(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
