use std::path::PathBuf;

/// Errors raised across the alignment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("chunk too short: {duration_s} s, provider needs at least {min_s} s")]
    ChunkTooShort { duration_s: f64, min_s: f64 },

    #[error("cache corrupted: {0}")]
    Corrupt(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("unlocatable question {question_id}: span overlaps no chunk")]
    Unlocatable { question_id: String },

    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("setup error: {0}")]
    Setup(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
