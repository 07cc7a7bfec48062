use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("test undefined: {0}")]
    UndefinedTest(String),
    #[error(transparent)]
    Metric(#[from] neurometrics::MetricError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
