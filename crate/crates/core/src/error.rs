use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("chain initialization failed: {0}")]
    Init(String),

    #[error("{}: format error: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("{}:{line}: cannot parse {field} value {value:?}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        field: String,
        value: String,
    },

    #[error("{}:{line}: non-finite value {value:?}", path.display())]
    Value {
        path: PathBuf,
        line: u64,
        value: String,
    },

    #[error("{}:{line}: rating {rating} outside [0, 100]", path.display())]
    Range {
        path: PathBuf,
        line: u64,
        rating: f64,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
