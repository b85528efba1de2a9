//! Batch front-end for the attack analysis: configuration parsing, sweep
//! orchestration, Monte-Carlo validation and CSV/JSON emission.

pub mod checks;
pub mod commands;
pub mod config;
pub mod render;

/// Process exit codes.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const VALIDATION_FAILURE: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
}

/// A command failure carrying the exit code to report.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn config(message: impl Into<String>) -> Self {
        CmdError {
            code: exit_code::CONFIG_ERROR,
            message: message.into(),
        }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        CmdError {
            code: exit_code::INFEASIBLE,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CmdError {
            code: exit_code::VALIDATION_FAILURE,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CmdError {}

pub type CmdResult<T> = std::result::Result<T, CmdError>;
