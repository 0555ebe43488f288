use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions or lengths disagree.
    #[error("shape error: {0}")]
    Shape(String),
    /// An operation was called outside its documented preconditions.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A network, schedule or experiment configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A binary file failed to parse.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use contract_err;
pub(crate) use shape_err;
