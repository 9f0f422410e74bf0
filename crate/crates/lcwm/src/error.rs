use thiserror::Error;

/// Error type shared across the crate.
///
/// Variants map onto the CLI exit-code classes: config errors exit 2,
/// missing upstream artifacts exit 3, numeric failures (NaN/divergence)
/// exit 4 and I/O errors exit 5.
#[derive(Error, Debug)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

impl Error {
    /// CLI exit code class for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) | Error::Shape(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io(_) | Error::Json(_) => 5,
            Error::Candle(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
