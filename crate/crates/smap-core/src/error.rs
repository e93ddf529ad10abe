use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmapError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failure: {0}")]
    Verification(String),
}

impl SmapError {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            SmapError::Parameter(_) => 2,
            SmapError::Numerical(_) => 3,
            SmapError::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SmapError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(SmapError::Parameter(msg.into()))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(SmapError::Numerical(msg.into()))
}
