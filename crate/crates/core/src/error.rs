use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("Vandermonde solve failed: condition estimate {condition:.3e}, relative residual {residual:.3e}")]
    IllConditioned { condition: f64, residual: f64 },

    #[error("kernel Gram matrix is singular (minimum pivot {pivot:.3e})")]
    SingularGram { pivot: f64 },

    #[error("training diverged at step {step}: loss {loss:.6e} exceeds {limit:.6e}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("learning rate {lr:.6e} is not below B1 = {b1:.6e}")]
    StepTooLarge { lr: f64, b1: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {0:.3e}")]
    NotPsd(f64),

    #[error("{}:{line}:{column}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, column: usize, msg: String },

    #[error("{}: {msg}", path.display())]
    Dataset { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
