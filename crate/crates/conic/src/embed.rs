//! Real symmetric embedding of a Hermitian problem and conversion to the
//! equality standard form used by the interior-point iterations.
//!
//! A Hermitian `X = Xr + i·Xi` maps to `[[Xr, −Xi], [Xi, Xr]]`. Since
//! `Tr(Cₑ Xₑ) = 2·Re Tr(C X)`, every embedded coefficient is halved so
//! objective and constraint values are preserved exactly. Inequalities get a
//! nonnegative slack appended after the user scalars (`−1` for `≥`, `+1` for `≤`).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::problem::{CMatrix, ConicProblem, LinExpr, Relation};

/// `[[Re A, −Im A], [Im A, Re A]]`.
pub fn embed_matrix(a: &CMatrix) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i + n, j)] = z.im;
            out[(i, j + n)] = -z.im;
        }
    }
    out
}

/// Recovers the Hermitian matrix whose embedding is closest to `y`
/// (averaging the two copies of each real/imaginary block).
pub fn extract_hermitian(y: &DMatrix<f64>) -> CMatrix {
    let n = y.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (y[(i, j)] + y[(i + n, j + n)]);
        let im = 0.5 * (y[(i + n, j)] - y[(i, j + n)]);
        Complex64::new(re, im)
    })
}

/// One row of the standard-form operator: block-sparse symmetric matrices
/// plus coefficients on the nonnegative vector block.
#[derive(Debug, Clone, Default)]
pub struct RealRow {
    pub(crate) psd: Vec<(usize, DMatrix<f64>)>,
    pub(crate) lin: Vec<(usize, f64)>,
}

impl RealRow {
    pub fn psd_terms(&self) -> &[(usize, DMatrix<f64>)] {
        &self.psd
    }

    pub fn lin_terms(&self) -> &[(usize, f64)] {
        &self.lin
    }

    pub(crate) fn norm_sq(&self) -> f64 {
        self.psd.iter().map(|(_, a)| a.norm_squared()).sum::<f64>()
            + self.lin.iter().map(|(_, a)| a * a).sum::<f64>()
    }

    pub fn evaluate(&self, psd: &[DMatrix<f64>], lin: &DVector<f64>) -> f64 {
        self.psd.iter().map(|(b, a)| a.dot(&psd[*b])).sum::<f64>()
            + self.lin.iter().map(|(j, a)| a * lin[*j]).sum::<f64>()
    }
}

/// `min ⟨C, X⟩ + cᵀx + ½ xᵀ diag(q) x  s.t.  A(X, x) = b,  X ⪰ 0, x ≥ 0`.
#[derive(Debug, Clone)]
pub struct RealProblem {
    pub(crate) psd_dims: Vec<usize>,
    pub(crate) num_scalars: usize,
    pub(crate) num_lin: usize,
    pub(crate) c_psd: Vec<DMatrix<f64>>,
    pub(crate) c_lin: DVector<f64>,
    pub(crate) q_lin: DVector<f64>,
    pub(crate) rows: Vec<RealRow>,
    pub(crate) b: DVector<f64>,
    pub(crate) constant: f64,
}

impl RealProblem {
    pub fn psd_dims(&self) -> &[usize] {
        &self.psd_dims
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    /// User scalars followed by one slack per inequality.
    pub fn num_lin(&self) -> usize {
        self.num_lin
    }

    pub fn rows(&self) -> &[RealRow] {
        &self.rows
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn objective_matrices(&self) -> &[DMatrix<f64>] {
        &self.c_psd
    }

    pub fn objective_value(&self, psd: &[DMatrix<f64>], lin: &DVector<f64>) -> f64 {
        let mut v = self.constant;
        for (c, x) in self.c_psd.iter().zip(psd) {
            v += c.dot(x);
        }
        for j in 0..self.num_lin {
            v += self.c_lin[j] * lin[j] + 0.5 * self.q_lin[j] * lin[j] * lin[j];
        }
        v
    }
}

fn embed_expr(expr: &LinExpr, nblocks: usize) -> RealRow {
    let mut blocks: Vec<Option<DMatrix<f64>>> = vec![None; nblocks];
    for (var, c) in &expr.matrix_terms {
        let e = embed_matrix(c) * 0.5;
        match &mut blocks[var.0] {
            Some(acc) => *acc += e,
            slot => *slot = Some(e),
        }
    }
    let mut lin: Vec<(usize, f64)> = Vec::new();
    for (var, a) in &expr.scalar_terms {
        match lin.iter_mut().find(|(j, _)| *j == var.0) {
            Some((_, acc)) => *acc += a,
            None => lin.push((var.0, *a)),
        }
    }
    RealRow {
        psd: blocks
            .into_iter()
            .enumerate()
            .filter_map(|(b, m)| m.map(|m| (b, symmetrize(m))))
            .collect(),
        lin,
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Builds the real standard-form problem. Values of every objective and
/// constraint expression are preserved for embedded Hermitian points.
pub fn embed_hermitian(problem: &ConicProblem) -> RealProblem {
    let nblocks = problem.matrix_dims.len();
    let psd_dims: Vec<usize> = problem.matrix_dims.iter().map(|n| 2 * n).collect();
    let num_slacks = problem
        .constraints
        .iter()
        .filter(|c| c.relation != Relation::Eq)
        .count();
    let num_lin = problem.num_scalars + num_slacks;

    let obj = embed_expr(&problem.objective, nblocks);
    let mut c_psd: Vec<DMatrix<f64>> = psd_dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for (b, m) in obj.psd {
        c_psd[b] = m;
    }
    let mut c_lin = DVector::zeros(num_lin);
    for (j, a) in obj.lin {
        c_lin[j] += a;
    }
    let mut q_lin = DVector::zeros(num_lin);
    for (j, q) in problem.quadratic.iter().enumerate() {
        q_lin[j] = *q;
    }

    let mut rows = Vec::with_capacity(problem.constraints.len());
    let mut b = DVector::zeros(problem.constraints.len());
    let mut next_slack = problem.num_scalars;
    for (k, c) in problem.constraints.iter().enumerate() {
        let mut row = embed_expr(&c.expr, nblocks);
        match c.relation {
            Relation::Ge => {
                row.lin.push((next_slack, -1.0));
                next_slack += 1;
            }
            Relation::Le => {
                row.lin.push((next_slack, 1.0));
                next_slack += 1;
            }
            Relation::Eq => {}
        }
        b[k] = c.rhs;
        rows.push(row);
    }

    RealProblem {
        psd_dims,
        num_scalars: problem.num_scalars,
        num_lin,
        c_psd,
        c_lin,
        q_lin,
        rows,
        b,
        constant: problem.objective_constant,
    }
}
