//! Dense primal-dual interior-point solver for small conic programs over
//! Hermitian PSD matrices and nonnegative scalars.
//!
//! ```
//! use mcbf_conic::{solve, ConicProblem, LinExpr, Relation, Status};
//!
//! let mut p = ConicProblem::new();
//! let x = p.add_scalar_var();
//! p.add_objective(LinExpr::new().scalar(x, 1.0));
//! let c = p.add_constraint(LinExpr::new().scalar(x, 1.0), Relation::Ge, 2.0);
//! let sol = solve(&p).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.scalar(x) - 2.0).abs() < 1e-6);
//! assert!((sol.dual(c) - 1.0).abs() < 1e-6);
//! ```

pub mod embed;
mod error;
mod ipm;
pub mod linalg;
mod problem;
mod solution;
mod solver;

pub use error::ConicError;
pub use linalg::{numerical_rank, principal_eigenpair, RANK_TOL};
pub use problem::{
    hermitian_asymmetry, trace_product, CMatrix, Constraint, ConstraintId, ConicProblem, LinExpr,
    MatrixVar, Relation, ScalarVar, HERMITIAN_TOL,
};
pub use solution::{Certificate, CertificateCheck, ConicSolution, KktResiduals, Status};
pub use solver::{
    check_feasibility, check_feasibility_with, dual_slacks, kkt_residuals, solve, solve_with,
    Feasibility, SolverSettings,
};
