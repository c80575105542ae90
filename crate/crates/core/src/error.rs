use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("time {t} outside [0, {duration}]")]
    Domain { t: f64, duration: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed trajectory: {0}")]
    Trajectory(String),
}

pub type Result<T> = std::result::Result<T, Error>;
