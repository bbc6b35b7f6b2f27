use thiserror::Error;

/// Errors raised by the positioning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration. `path` names the offending field when known.
    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A delay falls outside the window where the circular signal model holds.
    #[error("excess delay: {delay_samples:.3} samples outside window [{min:.3}, {max:.3}]")]
    ExcessDelay {
        delay_samples: f64,
        min: f64,
        max: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no correlation peak: signal is identically zero")]
    NoPeak,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("empty statistics: no successful trials")]
    EmptyStatistics,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
