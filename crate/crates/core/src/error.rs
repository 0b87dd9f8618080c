use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("event {index} out of bounds: {msg}")]
    OutOfBounds { index: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("energy {energy} outside tabulated PSF range [{lo}, {hi}]")]
    EnergyOutOfTable { energy: f64, lo: f64, hi: f64 },

    #[error("empty knot support interval ({left}, {right}) for knot {knot}")]
    EmptySupport { knot: usize, left: f64, right: f64 },

    #[error("rejection sampler gave up after {0} consecutive rejections")]
    RejectionExhausted(usize),

    #[error("{0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
