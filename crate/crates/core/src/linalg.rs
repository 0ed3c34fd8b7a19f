//! Small dense helpers: power iteration, Lanczos extremal eigenvalues and
//! symmetric matrix square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest singular value of `a` by power iteration on `a^T a`.
///
/// Stops when the Rayleigh quotient changes by less than `tol` relative.
pub fn operator_norm(a: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<f64> {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return Ok(0.0);
    }
    // deterministic, generic start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v /= v.norm();
    let mut prev = 0.0;
    for _ in 0..max_iters {
        let av = a * &v;
        let w = a.tr_mul(&av);
        let lambda = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (lambda - prev).abs() <= tol * lambda {
            return Ok(lambda.sqrt());
        }
        prev = lambda;
    }
    Err(Error::NoConvergence { what: "operator norm power iteration", iterations: max_iters })
}

/// Extremal eigenvalues `(min, max)` of a symmetric matrix by Lanczos with
/// full reorthogonalization.
///
/// Runs `min(dim, max_steps)` steps from a fixed start vector and takes the
/// extremal Ritz values; with `max_steps >= dim` the Krylov space is the
/// whole space and the values are exact up to roundoff. Inverse-free.
pub fn lanczos_extremes(a: &DMatrix<f64>, max_steps: usize) -> (f64, f64) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    if n == 0 {
        return (0.0, 0.0);
    }
    let steps = max_steps.min(n).max(1);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut q = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.754_877_666_246_693).fract());
    q /= q.norm();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for k in 0..steps {
        let mut w = a * &q;
        let ak = q.dot(&w);
        w.axpy(-ak, &q, 1.0);
        if k > 0 {
            w.axpy(-beta[k - 1], &basis[k - 1], 1.0);
        }
        basis.push(q.clone());
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        alpha.push(ak);
        let bk = w.norm();
        if k + 1 == steps || bk <= 1e-13 * scale {
            break;
        }
        beta.push(bk);
        q = w / bk;
    }
    let m = alpha.len();
    let mut tri = DMatrix::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = alpha[i];
        if i + 1 < m {
            tri[(i, i + 1)] = beta[i];
            tri[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(tri).eigenvalues;
    (eig.min(), eig.max())
}

/// Eigen-decomposition of a symmetric PSD matrix with roundoff negatives in
/// `(-1e-12 * max(1, ||a||), 0)` clamped to zero; anything more negative
/// is rejected.
pub fn psd_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (a + a.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let tol = 1e-12 * eig.eigenvalues.amax().max(1.0);
    for lam in eig.eigenvalues.iter_mut() {
        if *lam < -tol {
            return Err(Error::NotPsd(*lam));
        }
        if *lam < 0.0 {
            *lam = 0.0;
        }
    }
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(a)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}
