use std::path::PathBuf;

use crate::trainer::TrainHistory;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(&'static str),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("config error on line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged {
        epoch: usize,
        loss: f64,
        history: Box<TrainHistory>,
    },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(what, expected, got))
    }
}
