//! Small dense helpers shared by the Gaussian and sampling code.

use alloc::vec::Vec;
use nalgebra::{Complex, DMatrix};

/// Standard symplectic form for `n` modes in (X1, P1, ..., Xn, Pn) ordering.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the Hermitian matrix `cov + (i/2) Omega`.
pub fn uncertainty_min_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows();
    let omega = symplectic_form(n / 2);
    let h = DMatrix::from_fn(n, n, |i, j| Complex::new(cov[(i, j)], 0.5 * omega[(i, j)]));
    h.symmetric_eigenvalues().iter().fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Symplectic eigenvalues of a positive-definite covariance matrix, sorted ascending.
///
/// With `S = cov^{1/2}`, the matrix `S Omega S` is antisymmetric and its
/// singular values come in equal pairs equal to the symplectic eigenvalues.
pub fn symplectic_eigenvalues(cov: &DMatrix<f64>) -> Vec<f64> {
    let n = cov.nrows();
    let sqrt = psd_sqrt(cov);
    let m = &sqrt * symplectic_form(n / 2) * &sqrt;
    let mtm = m.transpose() * &m;
    let mut ev: Vec<f64> = symmetrize(&mtm)
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    ev.chunks(2).map(|p| 0.5 * (p[0] + p[p.len() - 1])).collect()
}

/// Principal square root of a symmetric positive-semidefinite matrix.
/// Small negative eigenvalues from rounding are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}
