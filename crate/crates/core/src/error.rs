use thiserror::Error;

/// Errors surfaced by the simulator and its analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid config, offending keys: {}", .0.join(", "))]
    InvalidKeys(Vec<String>),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("query at t={0} is before process origin")]
    BeforeOrigin(f64),

    #[error("interval [{0}, {1}] is empty or outside the recorded horizon")]
    Interval(f64, f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty sample set")]
    EmptySamples,

    #[error("traces are not comparable: {0}")]
    Incomparable(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
