use thiserror::Error;

use crate::net::NetworkParams;
use crate::train::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid network configuration: {0}")]
    Config(String),

    #[error("batch normalization needs at least two samples, got {0}")]
    DegenerateBatch(usize),

    #[error("layer normalization needs at least two channels, got {0}")]
    DegenerateChannel(usize),

    #[error("normalization statistic fell below the epsilon floor: {0}")]
    DegenerateStatistics(String),

    #[error("kernel of size {size} exceeds the cap of {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("training diverged at iteration {}", .0.iteration)]
    Divergence(Box<DivergedRun>),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// State preserved when training produces a non-finite loss.
#[derive(Debug)]
pub struct DivergedRun {
    pub iteration: usize,
    /// Parameters at the last iterate with a finite loss.
    pub params: NetworkParams,
    pub trace: TrainTrace,
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
