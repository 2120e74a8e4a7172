use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("construction error: {0}")]
    Construction(String),

    /// The integrator produced a non-finite state. Carries the last finite
    /// sample so callers can inspect how far the run got.
    #[error("non-finite state at t = {time}; last valid sample at t = {last_time}")]
    Numerical {
        time: f64,
        last_time: f64,
        last_state: Vec<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub trait ResultExt<T> {
    fn context(self, context: &str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: &str) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}
