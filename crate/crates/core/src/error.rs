use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        /// 1-based data row (header excluded); 0 refers to the header.
        row: usize,
        column: String,
        message: String,
    },

    /// A malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular normal matrix: {0}")]
    Singular(String),

    #[error("optimization diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("at {context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl Error {
    /// True for configuration errors, including those wrapped in context.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Json(_) => true,
            Error::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
