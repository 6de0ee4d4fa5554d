use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("action {action} out of range for {num_actions} actions")]
    InvalidAction { action: usize, num_actions: usize },

    #[error("trajectory does not end with a terminal transition")]
    UnterminatedTrajectory,

    #[error("pool is empty: {0}")]
    EmptyPool(&'static str),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("environment `{0}` is not enumerable")]
    NotEnumerable(String),

    #[error("unknown metric `{name}`; valid metrics: {}", valid.join(", "))]
    UnknownMetric { name: String, valid: Vec<String> },

    #[error("incompatible runs: {0}")]
    Incompatible(String),

    #[error("empty metric log")]
    EmptyLog,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("worker {worker} failed: {message}")]
    Worker { worker: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
