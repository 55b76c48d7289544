use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Sensor layout cannot support a fix (collinear sensors, target on a sensor, ...).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// The hyperbolic fix has no real, consistent root at the requested altitude.
    #[error("no position fix at altitude {altitude} m")]
    NoSolution { altitude: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// Every altitude hypothesis failed to produce an observation.
    #[error("altitude resolver failed at iteration {iteration}: {message}")]
    ResolverFailure { iteration: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
