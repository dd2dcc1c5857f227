use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("training diverged at iteration {iteration}: {what} is not finite")]
    Diverged { iteration: u64, what: String },
    #[error("checkpoint does not match model: {0}")]
    Checkpoint(String),
    /// Raised by callers' hooks (for example I/O in a training observer).
    #[error("{0}")]
    External(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
