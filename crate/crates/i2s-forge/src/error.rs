//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input of {len} bytes exceeds the executor limit of {max} bytes")]
    InputTooLong { len: usize, max: usize },

    #[error("unknown target {name:?}; valid targets: {}", valid.join(", "))]
    UnknownTarget { name: String, valid: Vec<&'static str> },

    #[error("unknown stage variant {name:?}; valid variants: {}", valid.join(", "))]
    UnknownVariant { name: String, valid: Vec<&'static str> },

    #[error("bad parameter {key}={value} for target {target}: {reason}")]
    BadTargetParam {
        target: String,
        key: String,
        value: String,
        reason: String,
    },

    #[error("mapping mode `fine` requires a taint association")]
    MissingTaintAssociation,

    #[error("campaign needs at least one initial seed")]
    EmptyCorpus,

    #[error("campaign needs an execution or wall-clock budget greater than zero")]
    NoBudget,

    #[error("{path}: not a stats file: {reason}", path = path.display())]
    BadStats { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
