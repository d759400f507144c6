//! Error type shared across the core modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Matrix or layer dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument or configuration value.
    #[error("validation error: {0}")]
    Validation(String),

    /// A gradient, loss, or parameter became NaN/Inf.
    ///
    /// `step` is the training iteration at which the overflow was detected,
    /// `term` names the quantity that overflowed.
    #[error("non-finite value at step {step} in {term}")]
    NonFinite { step: usize, term: &'static str },

    /// Operation not defined for this weight representation.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (CSV bundle, serialized params).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
