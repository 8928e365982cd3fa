use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("window exceeded: {0}")]
    WindowExceeded(String),
    #[error("window too small: {0}")]
    WindowTooSmall(String),
    #[error("budget exhausted after {steps} steps: {what}")]
    Budget { what: String, steps: u64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        invalid(msg)
    }
}
