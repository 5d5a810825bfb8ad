use alloc::string::String;

/// Errors raised by the estimation, planning and world-simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid environment, scenario or solver configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A normalization hit a vanishing vector (e.g. robot at the transponder).
    #[error("singular geometry: {0}")]
    Singularity(String),
    /// A reflection precondition does not hold (wrong side of a line, bad chain).
    #[error("invalid reflection geometry: {0}")]
    Geometry(String),
    /// A point lies on a line of reflection, so the reflection is undefined.
    #[error("degenerate reflection: {0}")]
    Degenerate(String),
    /// A control exceeds the configured bound.
    #[error("control {value} exceeds bound {bound}")]
    ControlBound { value: f64, bound: f64 },
    /// Innovation covariance too badly conditioned to invert.
    #[error("innovation covariance ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    /// Matrix or vector shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The planner could not repair an infeasible start.
    #[error("infeasible problem: {0}")]
    Infeasible(String),
}

pub type Result<T> = core::result::Result<T, Error>;
