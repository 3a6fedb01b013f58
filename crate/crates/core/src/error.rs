use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at element {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing {map} map in {}", dir.display())]
    MissingMap { map: &'static str, dir: PathBuf },
    #[error("malformed material directory {}: {reason}", dir.display())]
    Format { dir: PathBuf, reason: String },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
