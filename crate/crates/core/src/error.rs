use pairalign_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("question does not follow the question grammar: {0}")]
    QuestionGrammar(String),
    #[error("sequence of length {len} exceeds the context of {max}")]
    TooLong { len: usize, max: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("curation produced no tuples ({und_skipped} understanding skips, {gen_skipped} generation skips over {pairs} pairs)")]
    CurationFailure {
        pairs: usize,
        und_skipped: usize,
        gen_skipped: usize,
    },
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
