use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad flags, malformed or inconsistent configuration.
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] lql_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Failed(String),
}

impl Error {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Error::Io { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Core(lql_core::Error::InvalidConfig(_)) => crate::EXIT_USAGE,
            _ => crate::EXIT_FAILURE,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Usage(format!("malformed config: {e}"))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
