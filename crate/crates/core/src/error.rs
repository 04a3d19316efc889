use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("PLY parse error at header line {line}: {message}")]
    PlyHeader { line: usize, message: String },

    #[error("PLY body error: {0}")]
    PlyBody(String),

    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported dimension {0}; only 2 and 3 are supported")]
    UnsupportedDimension(usize),

    #[error("data has numerical rank {achieved}, cannot keep {requested} components")]
    RankDeficient { achieved: usize, requested: usize },

    #[error("covariance is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
