use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// An integer count does not fit the representable range.
    #[error("out of range: {0}")]
    OutOfRange(String),
    /// The requested work exceeds a configured resource guard.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    /// Floating-point failure: overflow, divergence, non-finite result, bracket failure.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
