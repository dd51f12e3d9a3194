//! Small dense linear-algebra helpers shared by the density, theta and
//! fitting code. Everything here works on `nalgebra` dynamic matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest absolute difference between `a` and its transpose.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Replace `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    if a.iter().any(|x| !x.is_finite()) {
        return (f64::NAN, f64::NAN);
    }
    let eig = SymmetricEigen::new(a.clone());
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Positive definiteness test used throughout: the Cholesky factorization
/// must succeed and the smallest eigenvalue must exceed `1e-12` times the
/// largest. Returns the smallest eigenvalue on failure.
pub fn check_pd(a: &DMatrix<f64>) -> std::result::Result<(), f64> {
    let (lo, hi) = eigen_range(a);
    if !(lo > 1e-12 * hi.abs()) || !(lo > 0.0) {
        return Err(lo);
    }
    if Cholesky::new(a.clone()).is_none() {
        return Err(lo);
    }
    Ok(())
}

/// Cholesky factor of a positive definite matrix, or a descriptive error.
pub fn cholesky(a: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    check_pd(a).map_err(|min_eigenvalue| Error::NotPositiveDefinite {
        what,
        min_eigenvalue,
    })?;
    Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite {
        what,
        min_eigenvalue: eigen_range(a).0,
    })
}

/// `log det A` from a Cholesky factorization.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// `L⁻¹ B` for the lower Cholesky factor `L` of `A = L Lᵀ`, so that
/// `(L⁻¹B)ᵀ(L⁻¹B) = Bᵀ A⁻¹ B` without forming the inverse.
pub fn whiten(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let l = chol.l();
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a non-zero diagonal")
}

/// `A⁻¹ b` through the factorization.
pub fn solve(chol: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    chol.solve(b)
}

/// `Bᵀ A⁻¹ B`, symmetrized.
pub fn quad_form_inv(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let x = whiten(chol, b);
    let mut out = x.transpose() * &x;
    symmetrize(&mut out);
    out
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}
