use std::fmt;

use dronenet_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const GRADCHECK: u8 = 4;
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown or malformed config keys.
    Usage(String),
    /// Missing files, malformed inputs, model/dataset mismatches.
    Data(String),
    /// A non-finite value stopped training or inference.
    Numerical(String),
    /// The gradient check ran and found a mismatch.
    GradCheck(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Data(_) => exit::DATA,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::GradCheck(_) => exit::GRADCHECK,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::GradCheck(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
