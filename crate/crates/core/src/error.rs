use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid call: {0}")]
    InvalidCall(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("invalid indices: {0}")]
    InvalidIndices(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
