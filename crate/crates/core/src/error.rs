use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value (or network shape) is invalid.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// The caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A quantity is too large to represent.
    #[error("range error: {0}")]
    Range(String),

    /// The optimality gap is undefined because every value is equal.
    #[error("undefined gap: all {0} values are equal")]
    UndefinedGap(usize),

    /// A loss or value became NaN/inf during training.
    #[error("non-finite {what} at episode {episode} (env step {step})")]
    NonFinite {
        what: String,
        episode: u64,
        step: u64,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn shape(what: &str, expected: usize, got: usize) -> Self {
        Error::Config {
            key: what.to_string(),
            message: format!("expected length {expected}, got {got}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
