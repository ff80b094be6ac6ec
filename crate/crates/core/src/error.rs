use std::path::PathBuf;

use lgcd_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown prompt token {token:?} (vocabulary: {known})")]
    UnknownToken { token: String, known: String },
    #[error("invalid prompt: {0}")]
    Prompt(String),
    #[error("temporal pair mismatch at level {level}: {a:?} vs {b:?}")]
    TemporalPair {
        level: usize,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("decoder: {0}")]
    Decoder(String),
    #[error("scene generation: {0}")]
    Generation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {}: {msg}", path.display())]
    Dataset { path: PathBuf, msg: String },
    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dataset(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
