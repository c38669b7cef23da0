//! Harness errors with their process exit codes.

use thiserror::Error;

/// Exit code contract: 0 success, 2 config error, 3 invariant violation,
/// 4 component failure.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("component failure: {0}")]
    Component(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Invariant(_) => 3,
            HarnessError::Component(_) => 4,
        }
    }
}

impl From<lana_core::CoreError> for HarnessError {
    fn from(e: lana_core::CoreError) -> Self {
        HarnessError::Component(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Component(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
