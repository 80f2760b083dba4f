use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor construction with mismatched value count.
    #[error("length {values} ≠ product {product}")]
    LengthMismatch { values: usize, product: usize },

    /// Shape disagreement between operands, with both shapes spelled out.
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Anything else wrong with an operand (rank, axis, empty input, ...).
    #[error("invalid operand: {0}")]
    InvalidOperand(String),

    /// Bad model / partition / training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A class label outside [0, classes).
    #[error("label {label} at index {index} out of range for {classes} classes")]
    InvalidLabel {
        index: usize,
        label: usize,
        classes: usize,
    },

    /// A value that must be finite was not.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Binary file format violation, located by byte offset.
    #[error("{message} at offset {offset}")]
    Format { offset: usize, message: String },

    /// Dataset synthesis problem (exhausted class space and the like).
    #[error("dataset error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

pub type Result<T> = std::result::Result<T, Error>;
