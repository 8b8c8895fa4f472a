use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PondError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PondError {
    /// A derivative evaluated to NaN or infinity. Usually a mis-specified constant.
    #[error("model error at t={time} min: {what}")]
    Model { time: f64, what: String },

    /// The strategy returned no mode for a reachable decision state.
    #[error("strategy gap at decision {decision} (t={time} min, w={level} cm)")]
    StrategyGap { decision: usize, time: f64, level: f64 },

    #[error("state outside the decision grid at decision {decision}: {what}")]
    OutOfGrid { decision: usize, what: String },

    #[error("initial configuration is infeasible: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl PondError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PondError::InvalidParam(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PondError::Io { path: path.into(), source }
    }
}
