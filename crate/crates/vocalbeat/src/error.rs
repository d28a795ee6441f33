use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failures of the file, corpus and CLI layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: expected header `# fps=<int>`")]
    MissingHeader { line: usize },
    #[error("line {line}: malformed row `{text}`")]
    MalformedRow { line: usize, text: String },
    #[error("line {line}: value {value} outside [0, 1]")]
    OutOfRange { line: usize, value: f64 },
    #[error("line {line}: time {time} is not after the previous one")]
    NonMonotone { line: usize, time: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Core(#[from] vocalbeat_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
