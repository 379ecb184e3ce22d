use thiserror::Error;

use crate::value::SolveReport;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory diverged at t = {time} (|p| = {norm})")]
    Divergence { time: f64, norm: f64 },

    #[error("value iteration did not converge after {} iterations (residual {:.3e})", .0.iterations, .0.final_residual)]
    NonConvergence(SolveReport),

    #[error("ill-posed start: {0}")]
    IllPosedStart(String),

    #[error("empty result: {0}")]
    Empty(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn precondition(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg()))
    }
}
