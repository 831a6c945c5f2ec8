use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (2). Clap's own errors also exit 2.
    Usage(String),
    /// Inputs missing, malformed or unusable (3).
    Data(String),
    /// Writing outputs or other I/O failed (4).
    Io(String),
}

impl CliError {
    pub fn code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 4,
        })
    }

    /// For errors raised while reading inputs: everything is a data error.
    pub fn input(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }

    /// For errors raised while computing: I/O stays I/O, the rest is data.
    pub fn core(e: earlin_core::Error) -> Self {
        match e {
            earlin_core::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }

    pub fn write(target: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Io(format!("writing {target}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
