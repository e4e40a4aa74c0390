use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on the arguments was violated.
    Argument(String),
    /// Scene generation could not place a primitive within the retry budget.
    Generation(String),
    /// The training loss (or a parameter) became non-finite.
    TrainingDiverged { step: u64 },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Generation(msg) => write!(f, "scene generation failed: {msg}"),
            Error::TrainingDiverged { step } => write!(f, "training diverged at step {step}"),
        }
    }
}

impl core::error::Error for Error {}
