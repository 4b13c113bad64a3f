use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading inputs or running a reconstruction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point ({r}, {z}) lies outside the mesh")]
    OutsideMesh { r: f64, z: f64 },

    #[error("no plasma: {0}")]
    NoPlasma(String),

    #[error("empty plasma domain")]
    EmptyPlasma,

    #[error("contour extraction failed: {0}")]
    Contour(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("singular system: {msg} (smallest eigenvalue estimate {min_eigenvalue:e})")]
    Singular { msg: String, min_eigenvalue: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerical machinery as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NoPlasma(_)
            | Error::EmptyPlasma
            | Error::Contour(_)
            | Error::Factorization(_)
            | Error::Singular { .. }
            | Error::Numerical(_) => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
