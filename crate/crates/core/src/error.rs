use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("vocabulary file {0} is empty")]
    EmptyVocabulary(PathBuf),

    #[error("duplicate ingredient name {0:?} in vocabulary")]
    DuplicateIngredient(String),

    #[error("unknown ingredient {0:?}")]
    UnknownIngredient(String),

    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incompatible ablation flags: {0}")]
    IncompatibleFlags(String),

    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: String, got: String },

    #[error("batch size {0} is too small; minibatch statistics need at least 2 samples")]
    BatchTooSmall(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot form mismatched pairs: {0}")]
    NoMismatch(String),

    #[error("non-finite loss at step {step}: {components}")]
    NonFiniteLoss { step: u64, components: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("grid of {width}x{height} px exceeds the {limit} px limit")]
    GridTooLarge { width: usize, height: usize, limit: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch { what, expected: expected.to_string(), got: got.to_string() }
    }
}
