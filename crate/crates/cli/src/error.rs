use std::path::PathBuf;

use edgenas_core::Error as CoreError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("missing {}; run `edgenas {producer}` first", path.display())]
    Prerequisite { path: PathBuf, producer: &'static str },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::Format { .. } => exit::IO,
            CliError::Prerequisite { .. } => exit::PREREQUISITE,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::InvalidSpec(_) | CoreError::Parse(_) => exit::CONFIG,
                CoreError::Diverged { .. }
                | CoreError::NonFinite(_)
                | CoreError::NonFiniteGradient(_)
                | CoreError::SingularFit(_)
                | CoreError::DistillFailed(_) => exit::NUMERIC,
                CoreError::MissingSurrogate { .. } | CoreError::Uncalibrated(_) => exit::PREREQUISITE,
                _ => exit::OTHER,
            },
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    /// Reserved by the argument parser for usage errors.
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const NUMERIC: i32 = 5;
    pub const PREREQUISITE: i32 = 6;
}
