//! Hermitian eigen-utilities used for rank checks and beamformer extraction.

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::ConicError;
use crate::problem::{hermitian_asymmetry, CMatrix, HERMITIAN_TOL};

/// Default relative eigenvalue threshold for [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-6;

fn hermitian_part(w: &CMatrix) -> CMatrix {
    (w + w.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Ascending eigenvalues of the Hermitian part of `w`.
pub fn eigenvalues(w: &CMatrix) -> Vec<f64> {
    if w.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(w))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn max_eigenvalue(w: &CMatrix) -> f64 {
    eigenvalues(w).last().copied().unwrap_or(0.0)
}

pub fn min_eigenvalue(w: &CMatrix) -> f64 {
    eigenvalues(w).first().copied().unwrap_or(0.0)
}

/// Largest eigenvalue and a unit eigenvector of a Hermitian matrix.
///
/// The vector's phase is fixed so its largest-modulus entry is real positive.
pub fn principal_eigenpair(w: &CMatrix) -> Result<(f64, DVector<Complex64>), ConicError> {
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        return Err(ConicError::DimensionMismatch(format!(
            "expected a nonempty square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let asym = hermitian_asymmetry(w);
    if asym > HERMITIAN_TOL {
        return Err(ConicError::NotHermitian(asym));
    }
    let eig = SymmetricEigen::new(hermitian_part(w));
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let mut v: DVector<Complex64> = eig.eigenvectors.column(k).into_owned();
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        v.iter_mut().for_each(|z| *z *= phase);
    }
    let norm = v.norm();
    v /= Complex64::new(norm, 0.0);
    Ok((lambda, v))
}

/// Number of eigenvalues above `rel_tol · λ_max` (zero for the zero matrix).
pub fn numerical_rank(w: &CMatrix, rel_tol: f64) -> usize {
    let ev = eigenvalues(w);
    let top = match ev.last() {
        Some(&t) if t > 0.0 => t,
        _ => return 0,
    };
    ev.iter().filter(|&&l| l > rel_tol * top).count()
}

/// Closest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub fn project_psd(w: &CMatrix) -> CMatrix {
    let n = w.nrows();
    let eig = SymmetricEigen::new(hermitian_part(w));
    let mut out = CMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (&v * v.adjoint()) * Complex64::new(l, 0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag(d: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&x| c(x, 0.0))))
    }

    #[test]
    fn outer_product_has_its_vector_as_principal_pair() {
        let w = DVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, -1.0)]);
        let m = &w * w.adjoint();
        let (l, u) = principal_eigenpair(&m).unwrap();
        assert!((l - w.norm_squared()).abs() < 1e-12);
        let overlap = (u.adjoint() * &w)[(0, 0)].norm() / w.norm();
        assert!((overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_principal_pair() {
        let (l, u) = principal_eigenpair(&diag(&[5.0, 1.0])).unwrap();
        assert!((l - 5.0).abs() < 1e-14);
        assert!((u[0] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(u[1].norm() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(matches!(principal_eigenpair(&m), Err(ConicError::NotHermitian(_))));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&diag(&[5.0, 0.0, 0.0]), RANK_TOL), 1);
        assert_eq!(numerical_rank(&diag(&[1.0, 1.0]), RANK_TOL), 2);
        let w = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let v = DVector::from_vec(vec![c(0.0, 1.0), c(1.0, 0.0)]);
        let m = &w * w.adjoint() + (&v * v.adjoint()) * c(1e-9, 0.0);
        assert_eq!(numerical_rank(&m, RANK_TOL), 1);
        assert_eq!(numerical_rank(&CMatrix::zeros(3, 3), RANK_TOL), 0);
    }

    #[test]
    fn projection_clips_negative_part() {
        let p = project_psd(&diag(&[2.0, -1.0]));
        assert!((p - diag(&[2.0, 0.0])).norm() < 1e-14);
    }
}
