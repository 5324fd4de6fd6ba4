use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by construction, simulation and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid flux vector: {0}")]
    InvalidFlux(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "rate bound exceeded at t={time}: particle {particle} on edge ({from},{to}) \
         has rate {rate} > bound {bound}"
    )]
    RateBoundExceeded {
        time: f64,
        particle: usize,
        from: usize,
        to: usize,
        rate: f64,
        bound: f64,
    },

    #[error("time {0} lies beyond the sampled horizon {1}")]
    BeyondHorizon(f64, f64),

    #[error("grid too large: {nodes} nodes exceeds the limit {limit}")]
    GridTooLarge { nodes: u128, limit: u128 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
