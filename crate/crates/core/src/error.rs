use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: malformed record: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("dangling reference: {kind} `{id}` refers to unknown {target} `{target_id}`")]
    DanglingReference {
        kind: &'static str,
        id: String,
        target: &'static str,
        target_id: String,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("tag vocabulary is empty after filtering with min frequency {0}")]
    EmptyVocabulary(usize),
    #[error("subword vocabulary target {target} is below the minimum {minimum}")]
    VocabularyTooSmall { target: usize, minimum: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("tag vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("graph format: {0}")]
    GraphFormat(String),
    #[error("problem `{0}` has no usable solution graphs")]
    NoUsableGraphs(String),
    #[error("sequence: {0}")]
    Sequence(String),
    #[error(transparent)]
    Nn(#[from] cptag_nn::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
