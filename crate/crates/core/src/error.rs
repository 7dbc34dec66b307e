use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element {element}: area {area:e}")]
    MeshCorruption { element: usize, area: f64 },

    #[error("non-finite value at vertex {vertex} ({x}, {y})")]
    Evaluation { vertex: usize, x: f64, y: f64 },

    #[error("point ({0}, {1}) lies outside the domain")]
    OutOfDomain(f64, f64),

    #[error("non-finite gradient norm on element {0}")]
    IterateCorruption(usize),

    #[error("quadrature on [{a}, {b}] did not reach tolerance {tol:e} (estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, tol: f64, estimate: f64 },

    #[error("linear solver: {0}")]
    LinearSolver(String),

    #[error("Newton did not converge at p = {p} after {iterations} iterations (residual ratio {ratio:e})")]
    NonConvergence {
        p: f64,
        iterations: usize,
        ratio: f64,
        best: Box<crate::fespace::VectorField>,
    },

    #[error("continuation failed at p = {p}: {reason}")]
    ContinuationFailure {
        p: f64,
        reason: String,
        state: Box<crate::solver::ContinuationState>,
    },

    #[error("format error in {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { what: what.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
