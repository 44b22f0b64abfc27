use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::embed::{embed_hermitian, extract_hermitian};
use crate::error::ConicError;
use crate::ipm::{self, IpmSettings, Iterate, Outcome, ScaledProblem, Verifier};
use crate::linalg::min_eigenvalue;
use crate::problem::{CMatrix, ConicProblem, Relation};
use crate::solution::{Certificate, ConicSolution, KktResiduals, Status};

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Target for the scaled internal residuals.
    pub tol: f64,
    /// Bound on the original-problem KKT residuals for declaring `Optimal`.
    pub accept_tol: f64,
    /// Relative violation allowed in infeasibility / unboundedness certificates.
    pub certificate_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            accept_tol: 1e-7,
            certificate_tol: 1e-8,
        }
    }
}

/// Outcome of [`check_feasibility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

pub fn solve(problem: &ConicProblem) -> Result<ConicSolution, ConicError> {
    solve_with(problem, &SolverSettings::default())
}

/// Decides feasibility by solving with the objective removed.
///
/// A solve that ends without an optimality or infeasibility certificate is
/// reported as [`ConicError::Indeterminate`].
pub fn check_feasibility(problem: &ConicProblem) -> Result<Feasibility, ConicError> {
    check_feasibility_with(problem, &SolverSettings::default())
}

pub fn check_feasibility_with(
    problem: &ConicProblem,
    settings: &SolverSettings,
) -> Result<Feasibility, ConicError> {
    let mut p = problem.clone();
    p.clear_objective();
    let sol = solve_with(&p, settings)?;
    match sol.status {
        Status::Optimal => Ok(Feasibility::Feasible),
        Status::Infeasible => Ok(Feasibility::Infeasible),
        Status::Unbounded | Status::MaxIter => Err(ConicError::Indeterminate {
            iterations: sol.iterations,
            residuals: sol.residuals,
        }),
    }
}

pub fn solve_with(problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution, ConicError> {
    problem.validate()?;
    let mut real = embed_hermitian(problem);

    // Rows with no coefficients are either vacuous or a direct contradiction.
    let mut kept = Vec::with_capacity(real.rows.len());
    for (k, row) in real.rows.iter().enumerate() {
        if row.norm_sq() > 0.0 {
            kept.push(k);
        } else if real.b[k] != 0.0 {
            let mut y = vec![0.0; real.rows.len()];
            y[k] = 1.0 / real.b[k];
            return Ok(infeasible_without_iterations(problem, y));
        }
    }
    let m_full = real.rows.len();
    if kept.len() < m_full {
        real.rows = kept.iter().map(|&k| real.rows[k].clone()).collect();
        real.b = DVector::from_iterator(kept.len(), kept.iter().map(|&k| real.b[k]));
    }

    let scaled = ScaledProblem::new(&real);
    let mut check = Check {
        problem,
        kept: &kept,
        m_full,
        settings,
        residuals: None,
    };
    let ipm_settings = IpmSettings {
        max_iter: settings.max_iter,
        tol: settings.tol,
        step_fraction: 0.98,
        ray_tol: 1e-6,
    };
    let res = ipm::run(&scaled, &ipm_settings, &mut check);

    let (matrices, scalars) = primal_point(problem, &res.iterate);
    let y = check.expand(&scaled.unscale_y(&res.iterate.y));
    let residuals = kkt_residuals(problem, &matrices, &scalars, &y);
    let objective = problem.objective_value(&matrices, &scalars);
    let dual_objective = dual_objective(problem, &scalars, &y);
    let (status, certificate) = match res.outcome {
        Outcome::Optimal => (Status::Optimal, None),
        Outcome::Infeasible(ray) => (
            Status::Infeasible,
            Some(Certificate::Farkas {
                y: check.expand(&ray),
            }),
        ),
        Outcome::Unbounded(xs, x) => {
            let (matrices, scalars) = primal_parts(problem, &xs, &x);
            (Status::Unbounded, Some(Certificate::Ray { matrices, scalars }))
        }
        // A stalled iterate that already meets the acceptance test is as good
        // as one that passed it during the run.
        Outcome::MaxIter if residuals.max() <= settings.accept_tol => (Status::Optimal, None),
        Outcome::MaxIter => (Status::MaxIter, None),
    };
    debug!(
        "{status} after {} iterations, residuals {:?}",
        res.iterations, residuals
    );
    Ok(ConicSolution {
        status,
        matrices,
        scalars,
        duals: y,
        objective,
        dual_objective,
        residuals,
        iterations: res.iterations,
        certificate,
    })
}

fn infeasible_without_iterations(problem: &ConicProblem, y: Vec<f64>) -> ConicSolution {
    ConicSolution {
        status: Status::Infeasible,
        matrices: problem.matrix_dims.iter().map(|&n| CMatrix::zeros(n, n)).collect(),
        scalars: vec![0.0; problem.num_scalars],
        duals: vec![0.0; problem.constraints.len()],
        objective: f64::NAN,
        dual_objective: f64::NAN,
        residuals: KktResiduals::default(),
        iterations: 0,
        certificate: Some(Certificate::Farkas { y }),
    }
}

fn primal_parts(problem: &ConicProblem, xs: &[DMatrix<f64>], x: &DVector<f64>) -> (Vec<CMatrix>, Vec<f64>) {
    let matrices = xs.iter().map(extract_hermitian).collect();
    let scalars = x.iter().take(problem.num_scalars).copied().collect();
    (matrices, scalars)
}

fn primal_point(problem: &ConicProblem, it: &Iterate) -> (Vec<CMatrix>, Vec<f64>) {
    primal_parts(problem, &it.xs, &it.x)
}

fn dual_objective(problem: &ConicProblem, scalars: &[f64], y: &[f64]) -> f64 {
    let by: f64 = problem.constraints.iter().zip(y).map(|(c, yk)| c.rhs * yk).sum();
    let quad: f64 = problem
        .quadratic
        .iter()
        .zip(scalars)
        .map(|(q, s)| 0.5 * q * s * s)
        .sum();
    by - quad + problem.objective_constant
}

/// Dual slack matrices `C_i − Σ y_k A_{k,i}` and scalar reduced costs
/// `c_j + q_j s_j − Σ y_k a_{k,j}`.
pub fn dual_slacks(problem: &ConicProblem, scalars: &[f64], y: &[f64]) -> (Vec<CMatrix>, Vec<f64>) {
    let mut zs: Vec<CMatrix> = problem.matrix_dims.iter().map(|&n| CMatrix::zeros(n, n)).collect();
    let mut z = vec![0.0; problem.num_scalars];
    for (var, c) in &problem.objective.matrix_terms {
        zs[var.0] += c;
    }
    for (var, a) in &problem.objective.scalar_terms {
        z[var.0] += a;
    }
    for (j, (q, s)) in problem.quadratic.iter().zip(scalars).enumerate() {
        z[j] += q * s;
    }
    for (c, &yk) in problem.constraints.iter().zip(y) {
        for (var, coeff) in &c.expr.matrix_terms {
            zs[var.0] -= coeff.map(|v| v * yk);
        }
        for (var, a) in &c.expr.scalar_terms {
            z[var.0] -= a * yk;
        }
    }
    (zs, z)
}

/// KKT residuals of a candidate primal-dual point, evaluated directly on
/// the original problem.
pub fn kkt_residuals(problem: &ConicProblem, matrices: &[CMatrix], scalars: &[f64], y: &[f64]) -> KktResiduals {
    let b_norm = problem.constraints.iter().map(|c| c.rhs * c.rhs).sum::<f64>().sqrt();
    let mut viol_sq: f64 = problem
        .constraints
        .iter()
        .map(|c| c.violation(matrices, scalars).powi(2))
        .sum();
    for m in matrices {
        viol_sq += (-min_eigenvalue(m)).max(0.0).powi(2);
    }
    for &s in scalars {
        viol_sq += (-s).max(0.0).powi(2);
    }
    let primal = viol_sq.sqrt() / (1.0 + b_norm);

    let c_norm = (problem
        .objective
        .matrix_terms
        .iter()
        .map(|(_, m)| m.norm_squared())
        .sum::<f64>()
        + problem.objective.scalar_terms.iter().map(|(_, a)| a * a).sum::<f64>())
    .sqrt();
    let (zs, z) = dual_slacks(problem, scalars, y);
    let mut dual_sq: f64 = 0.0;
    for zm in &zs {
        dual_sq += (-min_eigenvalue(zm)).max(0.0).powi(2);
    }
    for zj in z {
        dual_sq += (-zj).max(0.0).powi(2);
    }
    for (c, &yk) in problem.constraints.iter().zip(y) {
        let wrong = match c.relation {
            Relation::Ge => (-yk).max(0.0),
            Relation::Le => yk.max(0.0),
            Relation::Eq => 0.0,
        };
        dual_sq += wrong * wrong;
    }
    let dual = dual_sq.sqrt() / (1.0 + c_norm);

    let pobj = problem.objective_value(matrices, scalars);
    let dobj = dual_objective(problem, scalars, y);
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    KktResiduals { primal, dual, gap }
}

struct Check<'a> {
    problem: &'a ConicProblem,
    kept: &'a [usize],
    m_full: usize,
    settings: &'a SolverSettings,
    residuals: Option<KktResiduals>,
}

impl Check<'_> {
    fn expand(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.m_full];
        for (i, &k) in self.kept.iter().enumerate() {
            out[k] = y[i];
        }
        out
    }
}

impl Verifier for Check<'_> {
    fn optimal(&mut self, scaled: &ScaledProblem, it: &Iterate) -> bool {
        let (matrices, scalars) = primal_point(self.problem, it);
        let y = self.expand(&scaled.unscale_y(&it.y));
        let r = kkt_residuals(self.problem, &matrices, &scalars, &y);
        self.residuals = Some(r);
        r.max() <= self.settings.accept_tol
    }

    fn infeasible(&mut self, y: &DVector<f64>) -> bool {
        let cert = Certificate::Farkas { y: self.expand(y) };
        cert.check(self.problem).holds(self.settings.certificate_tol)
    }

    fn unbounded(&mut self, xs: &[DMatrix<f64>], x: &DVector<f64>) -> bool {
        let (matrices, scalars) = primal_parts(self.problem, xs, x);
        let cert = Certificate::Ray { matrices, scalars };
        cert.check(self.problem).holds(self.settings.certificate_tol)
    }
}
