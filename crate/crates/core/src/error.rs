use std::path::PathBuf;

use crate::optimize::OptimTrace;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand extents are incompatible with the operator.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A documented precondition does not hold for the given inputs.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operator produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// A gradient contained NaN or infinity.
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    /// Optimization diverged; the trace up to the failing iteration is kept.
    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        trace: Box<OptimTrace>,
    },

    #[error("missing input file {0}")]
    MissingFile(PathBuf),

    #[error("failed to parse {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
