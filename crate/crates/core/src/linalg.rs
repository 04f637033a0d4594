//! Small dense helpers shared by the estimators: a jittered Cholesky square
//! root, re-symmetrization and covariance health checks.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Jitter ladder, scaled by `trace(M) / n`. The first rung that factors wins.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-9, 1e-6];

/// Lower-triangular `L` with `L Lᵀ = M + jitter·I`.
///
/// The all-zero matrix factors to the zero matrix (a degenerate but valid
/// belief, e.g. a perfectly known state).
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_sqrt_with_jitter(m).map(|(l, _)| l)
}

/// Same as [`psd_sqrt`], also returning the jitter that was added.
pub fn psd_sqrt_with_jitter(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("psd_sqrt (square matrix)", n, m.ncols()));
    }
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::CovarianceDegeneracy(
            "matrix contains non-finite entries".into(),
        ));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok((DMatrix::zeros(n, n), 0.0));
    }

    let scale = m.trace() / n as f64;
    for rung in JITTER_LADDER {
        let jitter = rung * scale;
        let mut shifted = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
        } else if rung > 0.0 {
            // trace <= 0 with nonzero entries: no usable jitter scale
            break;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::CovarianceDegeneracy(format!(
        "Cholesky failed for {n}x{n} matrix (trace {:.3e}) at maximum jitter",
        m.trace()
    )))
}

/// Replace `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// True when every eigenvalue of the symmetric matrix `m` exceeds `-floor`.
///
/// Decided by attempting a Cholesky factorization of `m + floor·I`, which
/// succeeds exactly when that shifted matrix is positive definite.
pub fn eigen_floor_holds(m: &DMatrix<f64>, floor: f64) -> bool {
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += floor;
    }
    if shifted.iter().any(|v| !v.is_finite()) {
        return false;
    }
    Cholesky::new(shifted).is_some()
}

/// `L x` for lower-triangular `L`, touching only the lower triangle.
pub fn lower_tri_mul(l: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = l.nrows();
    out.iter_mut().for_each(|v| *v = 0.0);
    // column-major: walk columns so the inner loop is contiguous
    for (j, &xj) in x.iter().enumerate().take(n) {
        if xj == 0.0 {
            continue;
        }
        let col = l.column(j);
        for i in j..n {
            out[i] += col[i] * xj;
        }
    }
}

/// Weighted outer-product sum `Σ_k w_k d_k d_kᵀ` where `d_k` are the columns
/// of `deviations`.
pub fn weighted_gram(deviations: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = deviations.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= weights[k];
    }
    scaled * deviations.transpose()
}
