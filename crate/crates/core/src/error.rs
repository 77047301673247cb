use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnnError {
    #[error("invalid neuron parameters: {0}")]
    InvalidParams(String),

    #[error("length mismatch in {context}: expected {expected}, got {actual}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("inconsistent trace: {0}")]
    InconsistentTrace(String),

    #[error("spike train of length {0} does not fit a 63-bit index")]
    IndexOverflow(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid architecture `{spec}`: {reason}")]
    InvalidArchitecture { spec: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no forward cache; run a forward pass before backward")]
    MissingCache,

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("pixel value {value} outside [0, 255]")]
    PixelOutOfRange { value: f64 },

    #[error("{0}")]
    Idx(#[from] IdxError),

    #[error("missing spike-train snapshots: {0}")]
    MissingSnapshots(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

/// Failures while reading IDX files. Each malformation gets its own variant.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated {what}: need {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("{path}: unexpected image dimensions {rows}x{cols}, expected 28x28")]
    BadDimensions { path: PathBuf, rows: u32, cols: u32 },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: label {label} at index {index} is not a digit class")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SnnError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(SnnError::LengthMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SnnError::NonFinite { context, index }),
        None => Ok(()),
    }
}
