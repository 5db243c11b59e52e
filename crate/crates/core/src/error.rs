//! Shared error type for the reconstruction pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector/matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Two images are incomparable (different side, mask, or value domain).
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    /// A ray has an empty intersection with the reconstruction region.
    #[error("ray {angle} rad / offset {offset} does not intersect the mask")]
    EmptyRay { angle: f64, offset: f64 },

    /// A linear-algebra kernel failed (non-SPD system, NaN propagation, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but does not parse as the expected format.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
