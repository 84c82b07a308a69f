//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("value range mismatch: {0} vs {1}")]
    RangeMismatch(String, String),

    #[error("value {value} outside declared range {range} at {context}")]
    OutOfRange {
        context: String,
        range: String,
        value: f32,
    },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("no mask with hole ratio in [{lo}, {hi}] found after {tries} tries")]
    BucketUnsatisfiable { lo: f64, hi: f64, tries: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
