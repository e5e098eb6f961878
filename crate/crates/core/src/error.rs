use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("duplicate index {0:?}")]
    Duplicate(Vec<usize>),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("sampler error: {0}")]
    Sampler(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
