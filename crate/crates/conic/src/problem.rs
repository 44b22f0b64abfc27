//! Problem description: Hermitian PSD matrix variables, nonnegative scalar
//! variables, a linear (plus diagonal quadratic) objective and trace-linear
//! constraints.

use std::fmt;
use std::io::{self, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::ConicError;

/// Dense complex matrix used for all Hermitian data and variables.
pub type CMatrix = DMatrix<Complex64>;

/// Largest tolerated `‖A − Aᴴ‖_max / max(1, ‖A‖_max)` for "Hermitian" input.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Handle to a Hermitian PSD matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatrixVar(pub(crate) usize);

impl MatrixVar {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a nonnegative scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScalarVar(pub(crate) usize);

impl ScalarVar {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a constraint; indexes [`ConicSolution::duals`](crate::ConicSolution::duals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintId(pub(crate) usize);

impl ConstraintId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

/// `Σ Tr(C_i X_i) + Σ a_j s_j`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub(crate) matrix_terms: Vec<(MatrixVar, CMatrix)>,
    pub(crate) scalar_terms: Vec<(ScalarVar, f64)>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `Tr(coeff · X)`.
    pub fn trace(mut self, var: MatrixVar, coeff: CMatrix) -> Self {
        self.add_trace(var, coeff);
        self
    }

    pub fn add_trace(&mut self, var: MatrixVar, coeff: CMatrix) {
        self.matrix_terms.push((var, coeff));
    }

    /// Adds `scale · Tr(coeff · X)` without the caller cloning `coeff` first.
    pub fn add_trace_scaled(&mut self, var: MatrixVar, coeff: &CMatrix, scale: f64) {
        self.matrix_terms
            .push((var, coeff.map(|z| z * scale)));
    }

    pub fn scalar(mut self, var: ScalarVar, coeff: f64) -> Self {
        self.add_scalar(var, coeff);
        self
    }

    pub fn add_scalar(&mut self, var: ScalarVar, coeff: f64) {
        self.scalar_terms.push((var, coeff));
    }

    pub fn is_empty(&self) -> bool {
        self.matrix_terms.is_empty() && self.scalar_terms.is_empty()
    }

    pub fn matrix_terms(&self) -> &[(MatrixVar, CMatrix)] {
        &self.matrix_terms
    }

    pub fn scalar_terms(&self) -> &[(ScalarVar, f64)] {
        &self.scalar_terms
    }

    /// Value of the expression at the given point (`Re Tr` for matrix terms).
    pub fn evaluate(&self, matrices: &[CMatrix], scalars: &[f64]) -> f64 {
        let mut v = 0.0;
        for (var, c) in &self.matrix_terms {
            v += trace_product(c, &matrices[var.0]);
        }
        for (var, a) in &self.scalar_terms {
            v += a * scalars[var.0];
        }
        v
    }
}

/// `Re Tr(A B)` for square matrices of equal size.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let p = a[(i, k)] * b[(k, i)];
            acc += p.re;
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: LinExpr,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    /// Nonnegative amount by which `(matrices, scalars)` violates the constraint.
    pub fn violation(&self, matrices: &[CMatrix], scalars: &[f64]) -> f64 {
        let lhs = self.expr.evaluate(matrices, scalars);
        match self.relation {
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }

    /// Signed slack, nonnegative when satisfied (zero for equalities).
    pub fn slack(&self, matrices: &[CMatrix], scalars: &[f64]) -> f64 {
        let lhs = self.expr.evaluate(matrices, scalars);
        match self.relation {
            Relation::Ge => lhs - self.rhs,
            Relation::Le => self.rhs - lhs,
            Relation::Eq => -(lhs - self.rhs).abs(),
        }
    }
}

/// Minimize `Σ Tr(C_i X_i) + cᵀs + ½ Σ q_j s_j² + const`
/// subject to trace-linear constraints, `X_i ⪰ 0`, `s ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub(crate) matrix_dims: Vec<usize>,
    pub(crate) num_scalars: usize,
    pub(crate) objective: LinExpr,
    pub(crate) quadratic: Vec<f64>,
    pub(crate) objective_constant: f64,
    pub(crate) constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_matrix_var(&mut self, dim: usize) -> MatrixVar {
        self.matrix_dims.push(dim);
        MatrixVar(self.matrix_dims.len() - 1)
    }

    pub fn add_scalar_var(&mut self) -> ScalarVar {
        self.num_scalars += 1;
        self.quadratic.push(0.0);
        ScalarVar(self.num_scalars - 1)
    }

    /// Adds `expr` to the (minimized) linear objective.
    pub fn add_objective(&mut self, expr: LinExpr) {
        self.objective.matrix_terms.extend(expr.matrix_terms);
        self.objective.scalar_terms.extend(expr.scalar_terms);
    }

    /// Adds `½ q s²` to the objective. `q` must be nonnegative.
    pub fn add_quadratic(&mut self, var: ScalarVar, q: f64) {
        self.quadratic[var.0] += q;
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.objective_constant += c;
    }

    pub fn clear_objective(&mut self) {
        self.objective = LinExpr::new();
        self.quadratic.iter_mut().for_each(|q| *q = 0.0);
        self.objective_constant = 0.0;
    }

    pub fn add_constraint(&mut self, expr: LinExpr, relation: Relation, rhs: f64) -> ConstraintId {
        self.constraints.push(Constraint { expr, relation, rhs });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn matrix_dims(&self) -> &[usize] {
        &self.matrix_dims
    }

    pub fn num_matrix_vars(&self) -> usize {
        self.matrix_dims.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn quadratic(&self) -> &[f64] {
        &self.quadratic
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn has_quadratic(&self) -> bool {
        self.quadratic.iter().any(|&q| q != 0.0)
    }

    /// Primal objective value at the given point.
    pub fn objective_value(&self, matrices: &[CMatrix], scalars: &[f64]) -> f64 {
        let quad: f64 = self
            .quadratic
            .iter()
            .zip(scalars)
            .map(|(q, s)| 0.5 * q * s * s)
            .sum();
        self.objective.evaluate(matrices, scalars) + quad + self.objective_constant
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        if self.matrix_dims.is_empty() && self.num_scalars == 0 {
            return Err(ConicError::InvalidProblem("problem has no variables".into()));
        }
        if let Some(i) = self.matrix_dims.iter().position(|&n| n == 0) {
            return Err(ConicError::DimensionMismatch(format!(
                "matrix variable {i} has dimension 0"
            )));
        }
        if let Some(j) = self.quadratic.iter().position(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(ConicError::InvalidProblem(format!(
                "quadratic coefficient of scalar {j} must be finite and nonnegative"
            )));
        }
        self.validate_expr(&self.objective, "objective")?;
        for (k, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(ConicError::InvalidProblem(format!(
                    "constraint {k} has non-finite right-hand side"
                )));
            }
            self.validate_expr(&c.expr, &format!("constraint {k}"))?;
        }
        Ok(())
    }

    fn validate_expr(&self, expr: &LinExpr, what: &str) -> Result<(), ConicError> {
        for (var, c) in &expr.matrix_terms {
            let n = *self.matrix_dims.get(var.0).ok_or_else(|| {
                ConicError::DimensionMismatch(format!("{what}: unknown matrix variable {}", var.0))
            })?;
            if c.nrows() != n || c.ncols() != n {
                return Err(ConicError::DimensionMismatch(format!(
                    "{what}: coefficient is {}x{} but variable {} is {n}x{n}",
                    c.nrows(),
                    c.ncols(),
                    var.0
                )));
            }
            if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(ConicError::InvalidProblem(format!("{what}: non-finite coefficient")));
            }
            let asym = hermitian_asymmetry(c);
            if asym > HERMITIAN_TOL {
                return Err(ConicError::NotHermitian(asym));
            }
        }
        for (var, a) in &expr.scalar_terms {
            if var.0 >= self.num_scalars {
                return Err(ConicError::DimensionMismatch(format!(
                    "{what}: unknown scalar variable {}",
                    var.0
                )));
            }
            if !a.is_finite() {
                return Err(ConicError::InvalidProblem(format!("{what}: non-finite coefficient")));
            }
        }
        Ok(())
    }

    /// Writes a self-describing text dump for offline cross-checking.
    ///
    /// ```text
    /// conic-problem v1
    /// matrix <index> <dim>
    /// scalar <index> quad <q>
    /// objective constant <c>
    /// objective trace <var> <row> <col> <re> <im>
    /// objective scalar <var> <coef>
    /// constraint <k> <rel> <rhs>
    ///   trace <var> <row> <col> <re> <im>
    ///   scalar <var> <coef>
    /// end
    /// ```
    /// Only the upper triangle (including the diagonal) of each Hermitian
    /// coefficient is written; entries with modulus below 1e-300 are skipped.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "conic-problem v1")?;
        for (i, n) in self.matrix_dims.iter().enumerate() {
            writeln!(w, "matrix {i} {n}")?;
        }
        for (j, q) in self.quadratic.iter().enumerate() {
            writeln!(w, "scalar {j} quad {q:e}")?;
        }
        writeln!(w, "objective constant {:e}", self.objective_constant)?;
        write_expr(&mut w, "objective ", &self.objective)?;
        for (k, c) in self.constraints.iter().enumerate() {
            writeln!(w, "constraint {k} {} {:e}", c.relation, c.rhs)?;
            write_expr(&mut w, "  ", &c.expr)?;
        }
        writeln!(w, "end")
    }
}

fn write_expr<W: Write>(w: &mut W, prefix: &str, expr: &LinExpr) -> io::Result<()> {
    for (var, c) in &expr.matrix_terms {
        for col in 0..c.ncols() {
            for row in 0..=col {
                let z = c[(row, col)];
                if z.norm() > 1e-300 {
                    writeln!(w, "{prefix}trace {} {row} {col} {:e} {:e}", var.0, z.re, z.im)?;
                }
            }
        }
    }
    for (var, a) in &expr.scalar_terms {
        writeln!(w, "{prefix}scalar {} {a:e}", var.0)?;
    }
    Ok(())
}

/// `‖A − Aᴴ‖_max / max(1, ‖A‖_max)`.
pub fn hermitian_asymmetry(a: &CMatrix) -> f64 {
    let n = a.nrows();
    if a.ncols() != n {
        return f64::INFINITY;
    }
    let mut scale: f64 = 1.0;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(a[(i, j)].norm());
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / scale
}
