use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of a knot vector or patch.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Degenerate or inverted geometry map.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("point inversion failed for ({x}, {y}): {reason}")]
    Inversion { x: f64, y: f64, reason: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("reaction stage produced non-finite values at t = {time}; increase the number of reaction substeps (currently {substeps})")]
    Stiffness { time: f64, substeps: usize },

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid value for `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("simulation failed at step {step} (t = {time}): {source}")]
    Simulation {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
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
