use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input file does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input values are malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A caller supplied an argument outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Stages were run out of order or an internal invariant broke.
    #[error("pipeline invariant violated: {0}")]
    Invariant(String),

    /// A persisted model or matrix does not match the data it is applied to.
    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
