use std::path::PathBuf;

/// Errors produced by the codec library.
///
/// Every variant renders as a single line starting with a stable,
/// machine-parseable prefix (`shape:`, `entropy:`, ...).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("entropy: {0}")]
    Entropy(String),
    #[error("bitstream: {0}")]
    Bitstream(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("training: {0}")]
    Training(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
