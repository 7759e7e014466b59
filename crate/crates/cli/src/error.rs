use std::fmt;

use dsattr_core::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_STATE: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

/// A command failure: either a library error or something internal to the tool.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Internal(String),
}

impl Failure {
    pub fn internal(message: impl fmt::Display) -> Self {
        Failure::Internal(message.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::State(_)) => EXIT_STATE,
            Failure::Core(_) => EXIT_INPUT,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;
