use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("input too short: {0}")]
    Length(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("frequency grids differ: {0}")]
    Grid(String),
    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;
