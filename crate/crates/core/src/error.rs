use thiserror::Error;

use crate::trace::TraceEvent;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid engine configuration: {0}")]
    Config(String),

    #[error("invalid model parameters: {0}")]
    Params(String),

    #[error("unknown model kind `{0}`")]
    UnknownModel(String),

    #[error("watchdog fired after {elapsed_ms} ms; suspected deadlock or livelock ({} trace events kept)", partial_trace.len())]
    Watchdog {
        elapsed_ms: u128,
        partial_trace: Vec<TraceEvent>,
    },

    #[error("trace line {line}: {message}")]
    TraceParse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
