use thiserror::Error;

#[derive(Debug, Error)]
pub enum RollError {
    #[error("invalid rollout config: {0}")]
    Config(String),
    /// The segment cannot host a rollout; the batch records this and moves on.
    #[error("skipped: {0}")]
    Skip(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("pair format error: {0}")]
    Format(String),
    #[error(transparent)]
    Synth(#[from] megsynth::SynthError),
    #[error(transparent)]
    Tok(#[from] tokmix::TokError),
    #[error(transparent)]
    Lm(#[from] flatgpt::LmError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RollError>;
