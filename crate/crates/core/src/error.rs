use std::path::PathBuf;

/// Errors raised by the inference library.
///
/// A zero-probability history is not an error: it is reported as a log
/// density of `f64::NEG_INFINITY`. `Validation` is reserved for inputs that
/// are structurally inconsistent.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("inconsistent data: {0}")]
    Validation(String),

    #[error("could not build a valid initial augmentation: {0}")]
    Init(String),

    #[error("all particles have zero weight on day {day}")]
    Degenerate { day: i32 },

    #[error("state space of {0} configurations exceeds the enumeration bound")]
    TooLarge(u64),

    #[error("{path}:{line}: {msg}")]
    Load {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("misaligned comparison: {0}")]
    Misaligned(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
