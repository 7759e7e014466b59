use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something that violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("class `{class}` has {count} instance(s); at least 2 are needed for intra-class similarity")]
    InsufficientData { class: String, count: usize },

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector for instance `{0}`")]
    ZeroVector(String),

    #[error("checksum mismatch for {path}: manifest says {expected}, payload hashes to {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    /// A procedure was invoked before the steps it depends on were run.
    #[error("{0}")]
    State(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or files, as opposed to session state.
    pub fn is_input(&self) -> bool {
        !matches!(self, Error::State(_) | Error::Io { .. })
    }
}
