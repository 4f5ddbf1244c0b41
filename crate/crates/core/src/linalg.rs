//! Dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Solves `a x = b` for symmetric positive semidefinite `a`, falling back to
/// LU and finally to a pseudo-inverse. The flag reports the fallback.
pub(crate) fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok((chol.solve(b), false));
    }
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let pinv = pseudo_inverse(a)?;
    Ok((pinv * b, true))
}

/// Inverse with pseudo-inverse fallback when the matrix is numerically singular.
pub(crate) fn inverse_or_pinv(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let cond = condition_number(a);
    if cond.is_finite() && cond < 1e14 {
        if let Some(inv) = a.clone().try_inverse() {
            return Ok((inv, false));
        }
    }
    Ok((pseudo_inverse(a)?, true))
}

pub(crate) fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12 * a.nrows().max(a.ncols()) as f64;
    svd.pseudo_inverse(eps)
        .map_err(|e| Error::Singular(format!("pseudo-inverse failed: {e}")))
}

/// 2-norm condition number from singular values.
pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Ordinary least squares via normal equations. Errors on a singular design.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let cond = condition_number(&xtx);
    if !cond.is_finite() || cond > 1e13 {
        return Err(Error::RankDeficient(format!(
            "normal equations are singular (condition number {cond:.3e})"
        )));
    }
    xtx.cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::RankDeficient("normal equations not positive definite".into()))
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
