//! Shared dense numeric kernel: symmetric eigendecompositions with a fixed
//! layout, matrix inverse square roots, SPD solves with a pivoted fallback,
//! and rank/condition diagnostics.
//!
//! Every routine here is deterministic for bit-identical input, which the
//! reproducibility contract of the rest of the crate leans on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue floor: eigenvalues below `EIGEN_REL_FLOOR * lambda_max`
/// are treated as zero when inverting or square-rooting.
pub const EIGEN_REL_FLOOR: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix in a canonical layout.
///
/// Eigenvalues come back ascending. Each eigenvector is scaled so that its
/// largest-magnitude entry is positive; on magnitude ties the first such
/// entry decides. The convention makes eigenvector output reproducible, which
/// matters because weight matrices are built from these columns.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let se = a.clone().symmetric_eigen();
    if se.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "eigendecomposition produced non-finite eigenvalues".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[i]
            .partial_cmp(&se.eigenvalues[j])
            .expect("finite eigenvalues compare")
            .then(i.cmp(&j))
    });

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = se.eigenvalues[src];
        let mut col = se.eigenvectors.column(src).clone_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

/// Scales a vector so the first entry whose magnitude comes within a relative
/// whisker of the maximum is positive. A plain argmax would let one-ulp noise
/// between analytically tied magnitudes decide the sign; the whisker makes
/// such ties resolve to the earliest entry. No-op for the zero vector.
pub fn fix_sign(v: &mut DVector<f64>) {
    if v.is_empty() {
        return;
    }
    let m = v.amax();
    if m == 0.0 {
        return;
    }
    let cutoff = m * (1.0 - 1e-8);
    for i in 0..v.len() {
        if v[i].abs() >= cutoff {
            if v[i] < 0.0 {
                v.neg_mut();
            }
            return;
        }
    }
}

/// Symmetric inverse square root `A^{-1/2}` of a symmetric positive definite
/// matrix, via [`sym_eigen`]. Eigenvalues below the relative floor reject the
/// input as singular.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, q) = sym_eigen(a)?;
    let lambda_max = values[values.len() - 1];
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(Error::SingularMatrix(
            "matrix has no positive eigenvalues; inverse square root undefined".into(),
        ));
    }
    let floor = EIGEN_REL_FLOOR * lambda_max;
    if let Some(bad) = values.iter().find(|&&v| v < floor) {
        return Err(Error::SingularMatrix(format!(
            "eigenvalue {bad:.6e} below cutoff {floor:.6e}; matrix treated as singular"
        )));
    }
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, c)] / values[c].sqrt());
    Ok(&scaled * q.transpose())
}

/// Solves `A X = B` for symmetric positive definite `A`, trying Cholesky
/// first and falling back to full-pivot LU when the factorization fails.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve shapes {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let x = match a.clone().cholesky() {
        Some(chol) => chol.solve(b),
        None => a
            .clone()
            .full_piv_lu()
            .solve(b)
            .ok_or_else(|| Error::SingularMatrix("matrix is singular to working precision".into()))?,
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMatrix(
            "solve produced non-finite values; matrix is effectively singular".into(),
        ));
    }
    Ok(x)
}

/// Vector right-hand-side convenience wrapper around [`spd_solve`].
pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(DVector::from_column_slice(spd_solve(a, &cols)?.as_slice()))
}

/// Numerical rank at a tolerance relative to the largest singular value, plus
/// the 2-norm condition number (infinite when the smallest singular value is
/// zero or the matrix is identically zero).
pub fn rank_and_condition(a: &DMatrix<f64>, rel_tol: f64) -> (usize, f64) {
    let sv = a.clone().singular_values();
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if s_max <= 0.0 {
        return (0, f64::INFINITY);
    }
    let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank = sv.iter().filter(|&&s| s > rel_tol * s_max).count();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    (rank, condition)
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
