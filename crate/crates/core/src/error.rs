use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("operator {op} expects {expected} arguments, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("feature column index {index} out of range (have {n_features} base features)")]
    ColumnIndex { index: usize, n_features: usize },

    #[error("unknown feature name `{0}`")]
    UnknownFeature(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("fitness evaluation failed for `{expr}` (generation {generation}): {message}")]
    Fitness {
        expr: String,
        generation: usize,
        message: String,
    },

    #[error("run log error in {path} line {line}: {message}")]
    RunLog {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
