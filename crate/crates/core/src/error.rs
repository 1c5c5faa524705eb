use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("header is missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate post id `{0}`")]
    DuplicateId(String),

    #[error("post `{0}` has no label")]
    Unlabeled(String),

    #[error("score {score} for `{id}` is outside [0, 1]")]
    ScoreOutOfRange { id: String, score: f64 },

    #[error("unknown feature column `{0}`")]
    UnknownColumn(String),

    #[error("standardization parameters have not been fitted")]
    NotFitted,

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("sequence length {len} is shorter than the pooling window {pool}; increase the maximum sequence length")]
    SequenceTooShort { len: usize, pool: usize },

    #[error("ROC-AUC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("segmenter failed on post `{id}`: {message}")]
    Segmenter { id: String, message: String },

    #[error("encoder failed on post `{id}`: {message}")]
    Encoder { id: String, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {path} (run the `{stage}` stage first)")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("invalid file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
