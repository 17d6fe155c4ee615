use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgpkit::CgpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Schema or value problem in a config, located by a JSON pointer.
    #[error("config error at `{pointer}`: {message}")]
    Config { pointer: String, message: String },

    #[error("{context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: CgpError,
    },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config { .. } => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io { .. } => 4,
        })
    }
}

/// Sorts a library error into the CLI's categories. Bad values that reached the
/// library count as config errors; unreadable or malformed data files as I/O.
pub fn from_core(context: &str, pointer: &str, e: CgpError) -> CliError {
    match e {
        CgpError::Io(io) => CliError::Io {
            path: PathBuf::from(context),
            message: io.to_string(),
        },
        CgpError::Parse { .. } | CgpError::EmptySeries => CliError::Io {
            path: PathBuf::from(context),
            message: e.to_string(),
        },
        e if e.is_numeric() => CliError::Numeric {
            context: context.to_string(),
            source: e,
        },
        e => CliError::config(pointer, format!("{context}: {e}")),
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// `?`-friendly adapter for library calls inside an experiment.
pub trait Context<T> {
    fn ctx(self, context: &str) -> CliResult<T>;
}

impl<T> Context<T> for Result<T, CgpError> {
    fn ctx(self, context: &str) -> CliResult<T> {
        self.map_err(|e| from_core(context, "", e))
    }
}
