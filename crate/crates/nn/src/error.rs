use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range for {op} with {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward called on a tape that has already been consumed")]
    TapeConsumed,
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid dropout rate {0}; expected 0 <= rate < 1")]
    InvalidDropout(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint tag vocabulary hash mismatch")]
    VocabularyMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
