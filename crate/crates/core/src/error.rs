use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument violated its documented domain (bad σ, shape mismatch, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Internal state handed back to the library does not match what it expects,
    /// e.g. a forward trace replayed against a different head.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A non-finite loss showed up during training.
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidParameter(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
