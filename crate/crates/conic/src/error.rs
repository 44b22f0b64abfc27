use thiserror::Error;

use crate::solution::KktResiduals;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (relative asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The solver stopped without an optimality or infeasibility certificate.
    #[error(
        "feasibility could not be decided after {iterations} iterations \
         (primal {:e}, dual {:e}, gap {:e})",
        residuals.primal, residuals.dual, residuals.gap
    )]
    Indeterminate {
        iterations: usize,
        residuals: KktResiduals,
    },
}
