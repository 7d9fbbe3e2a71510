//! Library side of the CLI: config handling, backend construction, command
//! implementations, report rendering, and the bundled fixture generator.

pub mod backend_setup;
pub mod commands;
pub mod config;
pub mod fixtures;
pub mod meta;
pub mod render;

/// Errors split by exit code: config problems exit 2, pipeline problems 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Pipeline(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Pipeline(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }

    pub fn config(err: impl std::fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn pipeline(err: impl std::fmt::Display) -> Self {
        CliError::Pipeline(err.to_string())
    }
}
