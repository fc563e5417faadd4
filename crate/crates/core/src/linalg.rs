use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Numerically stable `log Σ exp(a_i)`. Returns `-inf` for empty input.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

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

/// Symmetric square root of a symmetric positive semidefinite matrix.
///
/// Negative eigenvalues (rounding noise) are clamped to zero before taking
/// roots, so the result always exists.
pub fn psd_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !mat.is_square() {
        return Err(Error::invalid("psd_sqrt needs a square matrix"));
    }
    let scale = mat.amax().max(1.0);
    let asym = asymmetry(mat);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let n = mat.nrows();
    if n == 1 {
        return Ok(DMatrix::from_element(1, 1, mat[(0, 0)].max(0.0).sqrt()));
    }
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    // exact symmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    Ok(out)
}

/// Empirical covariance of the columns of `data` (normalized by `M`).
pub fn empirical_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let m = data.ncols() as f64;
    let mean = data.column_mean();
    let centered = data - &mean * nalgebra::RowDVector::from_element(data.ncols(), 1.0);
    (&centered * centered.transpose()) / m
}
