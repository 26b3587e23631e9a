use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants map onto three broad classes used by the command-line
/// driver: data problems, configuration/usage problems and numerical
/// failures (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("unknown {kind} '{name}' in {file} line {line}: {text}")]
    UnknownSymbol {
        kind: &'static str,
        name: String,
        file: String,
        line: usize,
        text: String,
    },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing required key '{0}'")]
    MissingKey(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::UnknownSymbol { .. }
            | Error::MissingKey(_)
            | Error::Checkpoint(_) => ErrorClass::Data,
            Error::Config(_) => ErrorClass::Usage,
            Error::Shape { .. } | Error::NonFinite(_) | Error::Diverged(_) => {
                ErrorClass::Numerical
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
