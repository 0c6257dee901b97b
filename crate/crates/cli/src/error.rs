use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, paths or config (exit 1).
    Usage(String),
    /// The command ran and failed (exit 2).
    Runtime(String),
    /// The command ran but a checked threshold was exceeded (exit 3).
    Breach(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
            CliError::Breach(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Breach(m) => write!(f, "threshold exceeded: {m}"),
        }
    }
}

pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}
