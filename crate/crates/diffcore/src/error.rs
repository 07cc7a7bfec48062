use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("checkpoint format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DiffError::Dimension(msg.into()))
}
