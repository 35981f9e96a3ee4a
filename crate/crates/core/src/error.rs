use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size guard exceeded: {0}")]
    TooLarge(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable machine-readable identifier used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "invalid_config",
            Error::Shape(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::TooLarge(_) => "size_guard",
            Error::Format(_) => "malformed_file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
