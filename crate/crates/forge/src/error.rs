use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid forge configuration: {0}")]
    Config(String),
    #[error("source {resolution}px is too small for a {size}px crop")]
    SourceTooSmall { resolution: usize, size: usize },
    #[error("{requested} mixtures need {needed} distinct exemplars, only {available} are available")]
    Capacity {
        requested: usize,
        needed: usize,
        available: usize,
    },
    #[error("record {0} refers to an unknown source or exemplar")]
    UnknownId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Core(#[from] svbrdf_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
