//! Files, parallel execution and verification suites around
//! [`riskfilter_core`].

pub use riskfilter_core as core;

pub mod artifacts;
pub mod config;
pub mod io;
pub mod manifest;
pub mod parallel;
pub mod verify;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("output: {0}")]
    Output(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] riskfilter_core::error::Error),
}

impl Error {
    /// Process exit code: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            Error::Output(_) | Error::Runtime(_) | Error::Core(_) => 1,
        }
    }
}
