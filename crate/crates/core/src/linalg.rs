//! Small dense helpers shared by the solvers and the error analysis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest accepted condition number of a normal matrix after Jacobi
/// (diagonal) scaling.
pub(crate) const MAX_CONDITION: f64 = 1e12;

/// Solves `min ||a x - y||` through an SVD of the column-equilibrated matrix.
///
/// Returns the solution and `(aᵀa)⁻¹`. Fails with `RankDeficient` when the
/// equilibrated normal matrix has condition number above [`MAX_CONDITION`].
pub(crate) fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::rank(format!("{rows} equations for {cols} unknowns")));
    }
    if y.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "residual has {} rows, design has {rows}",
            y.len()
        )));
    }
    let scale = column_norms(a);
    if let Some(j) = scale.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::rank(format!("design column {j} is zero or non-finite")));
    }
    let mut scaled = a.clone();
    for (j, s) in scale.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let svd = scaled.svd(true, true);
    let sv = &svd.singular_values;
    let s_max = sv.max();
    let s_min = sv.min();
    if !(s_min > 0.0) || (s_max / s_min).powi(2) > MAX_CONDITION {
        return Err(Error::rank(format!(
            "normal matrix condition {:e} exceeds {MAX_CONDITION:e}",
            (s_max / s_min).powi(2)
        )));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    // x_scaled = V S⁻¹ Uᵀ y, then undo the column scaling.
    let mut uty = u.transpose() * y;
    for (k, s) in sv.iter().enumerate() {
        uty[k] /= s;
    }
    let mut x = v_t.transpose() * uty;
    for (j, s) in scale.iter().enumerate() {
        x[j] /= s;
    }

    // (aᵀa)⁻¹ = D⁻¹ V S⁻² Vᵀ D⁻¹
    let mut v_scaled = v_t.transpose();
    for (k, s) in sv.iter().enumerate() {
        v_scaled.column_mut(k).unscale_mut(*s);
    }
    let mut cov = &v_scaled * v_scaled.transpose();
    for i in 0..cols {
        for j in 0..cols {
            cov[(i, j)] /= scale[i] * scale[j];
        }
    }
    Ok((x, cov))
}

fn column_norms(a: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().map(|c| c.norm()).collect()
}

/// Inverse of a symmetric positive-definite matrix via Jacobi-scaled Cholesky.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", n, m.ncols())));
    }
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    if let Some(i) = d.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::rank(format!("diagonal entry {i} is not positive")));
    }
    let inv_sqrt: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(scaled.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::rank(format!(
            "matrix condition {:e} (scaled) is too large",
            hi / lo
        )));
    }
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::rank("cholesky factorization failed"))?;
    let inv = chol.inverse();
    Ok(symmetrize(&DMatrix::from_fn(n, n, |i, j| {
        inv[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
    })))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}
