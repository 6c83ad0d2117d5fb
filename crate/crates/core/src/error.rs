use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("format error: {0}")]
    Format(String),

    /// A provider answered with a non-success status (after retries) or failed
    /// at the transport level.
    #[error("provider error from {endpoint}: {message}")]
    Provider {
        endpoint: String,
        status: Option<u16>,
        message: String,
    },

    /// A provider answered, but the body did not have the expected shape.
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    /// Wraps a failure with the pipeline stage that produced it.
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Wraps a failure with the id of the query that produced it.
    #[error("query `{id}`: {source}")]
    Query {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Query { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad configuration or usage rather than data.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_))
    }
}
