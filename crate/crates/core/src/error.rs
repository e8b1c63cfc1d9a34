use thiserror::Error;

/// Errors raised by the estimation and control stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("covariance is singular even after maximal jitter")]
    SingularCovariance,
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("parameter below floor: {name} = {value} < {floor}")]
    FloorViolation { name: &'static str, value: f64, floor: f64 },
    #[error("filter failure: {0}")]
    FilterFailure(String),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
