//! Shared error type for the whole pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MssError {
    /// A value or argument violates an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Frame counts, unit counts, or shapes do not line up across scales.
    #[error("alignment mismatch: {0}")]
    AlignmentMismatch(String),

    /// A phoneme duration is zero or negative.
    #[error("invalid duration: {0}")]
    InvalidDuration(String),

    /// An operation was called in a mode that does not support it.
    #[error("mode error: {0}")]
    ModeError(String),

    /// A non-finite value appeared in a gradient or parameter update.
    #[error("numerical error: {0}")]
    NumericalError(String),

    /// A serialized file is malformed or carries the wrong magic bytes.
    #[error("format error: {0}")]
    FormatError(String),

    /// A checkpoint's config digest does not match the requested config.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MssError>;
