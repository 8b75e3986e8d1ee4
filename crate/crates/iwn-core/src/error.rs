//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// File exists but could not be decoded as an image, or does not exist.
    #[error("unreadable image file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Array/image dimensions do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Watermark extraction with a zero embedding strength would divide by zero.
    #[error("embedding strength must be positive")]
    ZeroStrength,

    /// An inverse DCT was requested on a plane holding DFT coefficients.
    #[error("wrong transform kind: expected {expected}, got {got}")]
    WrongTransformKind { expected: &'static str, got: &'static str },

    #[error("unsupported attack kind: {0}")]
    UnsupportedKind(String),

    #[error("attack pool is empty")]
    EmptyPool,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A loss term evaluated to NaN or infinity during training.
    #[error("non-finite loss at step {step}: term {term} = {value}")]
    NonFiniteLoss { step: usize, term: &'static str, value: f64 },

    /// The frozen parameter copy handed to a loss was not taken this step.
    #[error("stale parameter snapshot: taken at step {snapshot_step}, current step {current_step}")]
    StaleSnapshot { snapshot_step: u64, current_step: u64 },

    /// Checkpoint file is corrupt or inconsistent with its own config.
    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),
}
