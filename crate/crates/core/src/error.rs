//! Error type shared across the workspace.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped
//! by the layer that raises them (tensor ops, data handling, cache, config)
//! so the CLI can map them onto exit codes without string matching.

use std::path::PathBuf;
use thiserror::Error;

/// Unified error for the unlearning laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operand had the wrong dimensions for the requested op.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// A class label was outside `0..classes`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// A vector handed to an entropy/probability routine was not a
    /// distribution (negative mass or sum away from one).
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    /// A configuration value was outside its legal range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An optimizer step received a non-finite gradient coordinate.
    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },

    /// An unlearning method name was not recognised.
    #[error("unknown method `{given}` (valid: {valid})")]
    UnknownMethod { given: String, valid: &'static str },

    /// A cached model blob exists but failed its integrity checks.
    #[error("cache integrity failure for {path}: {reason}")]
    CacheIntegrity { path: PathBuf, reason: String },

    /// A required cached model is absent.
    #[error("no cached model at {path}; run `gradtau pretrain` first")]
    CacheMiss { path: PathBuf },

    /// The experiment configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A CSV dataset file was malformed.
    #[error("data format error at line {line}: {reason}")]
    DataFormat { line: usize, reason: String },

    /// A training phase failed while running (e.g. diverged).
    #[error("{0}")]
    Runtime(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: `1` for usage/config mistakes the
    /// caller can fix by editing arguments, `2` for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownMethod { .. }
            | Error::Config(_)
            | Error::InvalidParameter { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
