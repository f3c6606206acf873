use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest parse error: {0}")]
    Manifest(String),

    #[error("unsupported manifest schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("layer `{layer}` references undeclared tensor `{tensor}`")]
    MissingTensor { layer: String, tensor: String },

    #[error("tensor `{tensor}` has shape {found:?}, layer `{layer}` requires {expected:?}")]
    TensorShape {
        layer: String,
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight blob is {found} bytes, manifest declares {expected}")]
    BlobLength { expected: usize, found: usize },

    #[error("tensor `{tensor}` contains a non-finite value at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("bad IDX magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX payload: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("predictor misuse: {0}")]
    Misuse(String),

    #[error("argument {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("report error: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Report(e.to_string())
    }
}
