use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token stream format error: {0}")]
    Format(String),
    #[error("context error: {0}")]
    Context(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Tok(#[from] tokmix::TokError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LmError>;
