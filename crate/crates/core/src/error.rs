use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty logits")]
    EmptyLogits,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("record {id:?} is not labeled with a model class")]
    Unlabeled { id: String },

    #[error("empty corpus: no tokens survive vocabulary fitting")]
    EmptyCorpus,
    #[error("class {0:?} has no training examples")]
    MissingClass(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("embedding table: {0}")]
    EmbeddingTable(String),

    #[error("ppm: {0}")]
    Ppm(String),
    #[error("stale activation cache: {0}")]
    StaleCache(String),
    #[error("no trainable parameters")]
    NoTrainableParameters,
    #[error("no explanation-target layer")]
    NoExplanationTarget,
    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("case {0:?} is not escalated")]
    NotEscalated(String),
    #[error("unknown case {0:?}")]
    UnknownCase(String),
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
