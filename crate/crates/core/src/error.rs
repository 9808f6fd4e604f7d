use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("invalid document: {0}")]
    Document(String),

    #[error("invalid shard: {0}")]
    Shard(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("pool not found: {0}")]
    PoolNotFound(String),

    #[error("pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("no valid tokens")]
    NoValidTokens,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
