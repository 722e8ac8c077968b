use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported version {found} in {path} (expected {expected})")]
    BadVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("row {row} has L2 norm {norm}, outside 1 ± {tolerance}")]
    NormViolation {
        row: usize,
        norm: f64,
        tolerance: f64,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("count mismatch: {what} has {found}, expected {expected}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("label {label} at index {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("invalid metadata in {path}: {message}")]
    Metadata { path: PathBuf, message: String },

    #[error("unknown domain {0:?}")]
    UnknownDomain(String),

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: usize },

    #[error("zero-length {what} vector at row {row}")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}, domain {domain}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        domain: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
