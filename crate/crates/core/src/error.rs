use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("no path between ({0:.2}, {1:.2}) and ({2:.2}, {3:.2})")]
    Unreachable(f64, f64, f64, f64),
    #[error("oracle compiler emitted {0} actions without reaching the goal")]
    CompileStall(usize),
    #[error("episode sampling gave up after {0} rejected samples")]
    RetryExhausted(usize),
    #[error("prompt has {found} image placeholders, expected {expected}")]
    PlaceholderCountMismatch { found: usize, expected: usize },
    #[error("sequence length {0} exceeds the maximum of {1}")]
    SequenceTooLong(usize, usize),
    #[error("sample kind {0} carries no dream slots")]
    MissingDreamSlots(String),
    #[error("sample kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no rollout logs to score")]
    EmptyLogs,
    #[error("evaluation plan seed {0} overlaps the training seed pool")]
    SeedPoolOverlap(u64),
    #[error("non-finite gradient in `{param}` at batch {batch}")]
    NonFiniteGradient { batch: usize, param: String },
    #[error("no run found at {0}")]
    MissingRun(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Nn(#[from] nncore::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
