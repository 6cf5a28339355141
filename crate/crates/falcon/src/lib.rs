//! File formats, external evaluators, and run orchestration around the
//! `falcon-core` engine. Everything here touches the filesystem or spawns
//! processes; the engine itself stays pure.

pub mod cli;
pub mod compare;
pub mod rundir;
pub mod runner;
pub mod spacefile;
pub mod subprocess;
pub mod tabular;

use std::fmt;

/// Errors split by exit code: configuration problems (bad files, bad
/// flags) exit with 2, failures during an otherwise valid run with 1.
#[derive(Debug)]
pub enum AppError {
    Config(String),
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> AppError {
        AppError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> AppError {
        AppError::Runtime(msg.into())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(msg) | AppError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for AppError {}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}
