use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokError {
    #[error("invalid tokenizer config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("token file format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Synth(#[from] megsynth::SynthError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TokError>;
