use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown class id {0}")]
    UnknownClassId(usize),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("invalid registry: {0}")]
    InvalidRegistry(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("missing image file {0}")]
    MissingFile(PathBuf),

    #[error("unmatched class directories under {root}: {names:?}")]
    UnmatchedDirectories { root: PathBuf, names: Vec<String> },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tokenization failed: {0}")]
    Tokenize(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset split {0} is empty")]
    EmptySplit(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step} (samples {samples:?})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        step: usize,
        samples: Vec<usize>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("diffusion oracle contract violated: {0}")]
    Oracle(String),

    #[error("threshold calibration needs both real and fake scores")]
    Calibration,

    #[error("evaluation input mismatch: {0}")]
    Evaluation(String),

    #[error("unknown report format {0:?}")]
    UnknownFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
