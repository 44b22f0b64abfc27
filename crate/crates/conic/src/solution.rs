use std::fmt;

use crate::linalg::max_eigenvalue;
use crate::problem::{CMatrix, ConicProblem, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIter => "max-iter",
        })
    }
}

/// Relative KKT residuals measured on the original (unscaled, complex) problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖constraint violation‖₂ / (1 + ‖b‖₂)`.
    pub primal: f64,
    /// Dual cone violation (negative eigenvalues of the dual slacks, negative
    /// scalar reduced costs, wrong-signed multipliers) relative to `1 + ‖C‖`.
    pub dual: f64,
    /// `|primal − dual| / (1 + |primal| + |dual|)`.
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// Proof of infeasibility or unboundedness.
#[derive(Debug, Clone)]
pub enum Certificate {
    /// Multipliers `y` with `bᵀy = 1`, `Σ y_k A_k ⪯ 0` on every cone and
    /// `y_k` signed as a dual of its constraint. No feasible point can exist
    /// because it would give `0 ≥ Σ y_k A_k(x) ≥ bᵀy = 1`.
    Farkas { y: Vec<f64> },
    /// A nonzero direction `(D, d)` in the cones with `A(D, d) = 0` (inequality
    /// rows may move in their feasible direction) and negative objective slope.
    Ray {
        matrices: Vec<CMatrix>,
        scalars: Vec<f64>,
    },
}

/// Direct evaluation of a certificate against a problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    /// `bᵀy` for Farkas, `−(objective slope)` for rays; positive when proving.
    pub margin: f64,
    /// Largest violation of the cone / sign / equality conditions, relative
    /// to the size of the certificate.
    pub violation: f64,
}

impl CertificateCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.margin > 0.0 && self.violation <= tol * self.margin
    }
}

impl Certificate {
    pub fn check(&self, problem: &ConicProblem) -> CertificateCheck {
        match self {
            Certificate::Farkas { y } => check_farkas(problem, y),
            Certificate::Ray { matrices, scalars } => check_ray(problem, matrices, scalars),
        }
    }
}

fn check_farkas(problem: &ConicProblem, y: &[f64]) -> CertificateCheck {
    let mut by = 0.0;
    let mut violation: f64 = 0.0;
    let mut scale: f64 = 1.0;
    let mut agg: Vec<CMatrix> = problem
        .matrix_dims
        .iter()
        .map(|&n| CMatrix::zeros(n, n))
        .collect();
    let mut agg_s = vec![0.0; problem.num_scalars];
    for (c, &yk) in problem.constraints.iter().zip(y) {
        by += yk * c.rhs;
        let sign_violation = match c.relation {
            Relation::Ge => (-yk).max(0.0),
            Relation::Le => yk.max(0.0),
            Relation::Eq => 0.0,
        };
        violation = violation.max(sign_violation);
        let row_norm = (c.expr.matrix_terms.iter().map(|(_, m)| m.norm_squared()).sum::<f64>()
            + c.expr.scalar_terms.iter().map(|(_, a)| a * a).sum::<f64>())
        .sqrt();
        scale += yk.abs() * row_norm;
        for (var, coeff) in &c.expr.matrix_terms {
            agg[var.0] += coeff.map(|z| z * yk);
        }
        for (var, a) in &c.expr.scalar_terms {
            agg_s[var.0] += a * yk;
        }
    }
    for m in &agg {
        violation = violation.max(max_eigenvalue(m).max(0.0));
    }
    for a in agg_s {
        violation = violation.max(a);
    }
    CertificateCheck {
        margin: by,
        violation: violation / scale,
    }
}

fn check_ray(problem: &ConicProblem, matrices: &[CMatrix], scalars: &[f64]) -> CertificateCheck {
    let mut violation: f64 = 0.0;
    let scale = 1.0
        + matrices.iter().map(|m| m.norm()).sum::<f64>()
        + scalars.iter().map(|s| s.abs()).sum::<f64>();
    for m in matrices {
        violation = violation.max((-crate::linalg::min_eigenvalue(m)).max(0.0));
    }
    for &s in scalars {
        violation = violation.max(-s);
    }
    for c in &problem.constraints {
        let v = c.expr.evaluate(matrices, scalars);
        let bad = match c.relation {
            Relation::Ge => (-v).max(0.0),
            Relation::Le => v.max(0.0),
            Relation::Eq => v.abs(),
        };
        violation = violation.max(bad);
    }
    // Quadratic terms grow without bound along any ray that moves them.
    for (q, s) in problem.quadratic.iter().zip(scalars) {
        if *q > 0.0 {
            violation = violation.max(s.abs());
        }
    }
    CertificateCheck {
        margin: -problem.objective.evaluate(matrices, scalars),
        violation: violation / scale,
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: Status,
    /// Hermitian PSD values of the matrix variables.
    pub matrices: Vec<CMatrix>,
    pub scalars: Vec<f64>,
    /// One multiplier per constraint, `∂(optimal value)/∂(rhs)`: nonnegative
    /// for `≥`, nonpositive for `≤`.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn matrix(&self, var: crate::MatrixVar) -> &CMatrix {
        &self.matrices[var.0]
    }

    pub fn scalar(&self, var: crate::ScalarVar) -> f64 {
        self.scalars[var.0]
    }

    pub fn dual(&self, id: crate::ConstraintId) -> f64 {
        self.duals[id.0]
    }
}
