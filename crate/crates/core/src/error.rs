use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::graph::GraphError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    /// A state became NaN or infinite. `t` is the last time with a finite state.
    #[error("numerical instability after t = {t}")]
    NumericalInstability { t: f64 },
    #[error("control input {index} is negative ({value})")]
    NegativeControl { index: usize, value: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
