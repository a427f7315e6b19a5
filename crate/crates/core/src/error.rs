use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("document {index}: unknown subject entity `{subject}`")]
    UnknownSubject { index: usize, subject: String },

    #[error("reverse relations were already added to this graph")]
    AlreadyReversed,

    #[error("predicate {0} out of range")]
    PredicateOutOfRange(usize),

    #[error("entity {0} out of range")]
    EntityOutOfRange(usize),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("answer set is empty")]
    EmptyAnswers,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss became NaN on example {example}")]
    NanLoss { example: usize },

    #[error("graph format error: {0}")]
    GraphFormat(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
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

pub type Result<T> = std::result::Result<T, Error>;
