use mcbf_conic::ConicError;
use thiserror::Error;

use crate::network::BeamformingSolution;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("SINR targets cannot be met: {0}")]
    InfeasibleTarget(String),

    /// Every randomized candidate failed; the relaxed solution is attached.
    #[error("all {candidates} randomization candidates were infeasible")]
    RandomizationFailed {
        candidates: usize,
        relaxed: Box<BeamformingSolution>,
    },

    #[error("initial interference levels make subproblem {bs} infeasible; try larger values")]
    Initialization { bs: usize },

    #[error("solver did not converge: {0}")]
    Numerical(String),

    #[error(transparent)]
    Conic(#[from] ConicError),
}
