use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("signal has {values} values but grid has {samples} samples")]
    LengthMismatch { values: usize, samples: usize },

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("invalid harmonic series: {0}")]
    InvalidSeries(String),

    #[error("signal span too short: need {needed} samples, have {available}; lengthen the window")]
    SpanTooShort { needed: usize, available: usize },

    #[error("{what} ratio {ratio} is not an integer")]
    NonIntegerRatio { what: &'static str, ratio: f64 },

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("no transition found for fitting: {0}")]
    FitDomain(String),

    #[error("period detection failed: found {crossings} falling crossings, need at least 2")]
    Detection { crossings: usize },

    #[error("unusable reference: {0}")]
    UnusableReference(String),

    #[error("gain cross-check failed: symbolic {symbolic}, numeric {numeric}")]
    GainMismatch { symbolic: f64, numeric: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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
