//! Small dense linear-algebra and log-space helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::LN_10;

use crate::error::{Error, Result};

/// Largest absolute entry, used as the scale for relative tolerances.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric PSD matrix with small negative eigenvalues
/// (down to `-rel_tol * scale`) clamped to zero. `scale` is the caller's notion
/// of matrix magnitude; anything more negative is reported as the min eigenvalue.
pub fn psd_eigen(m: &DMatrix<f64>, abs_tol: f64) -> std::result::Result<SymmetricEigen<f64, nalgebra::Dyn>, f64> {
    let mut eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -abs_tol {
        return Err(min);
    }
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Returns `B` (p x r) with `B Bᵀ = W`, keeping only strictly positive
/// eigen-directions. Rank-deficient `W` gives `r < p`; `W = 0` gives `r = 0`.
pub fn psd_factor(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = w.nrows();
    if p == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = max_abs(w);
    if scale == 0.0 {
        return Ok(DMatrix::zeros(p, 0));
    }
    let eig = psd_eigen(w, 1e-8 * scale).map_err(|min| Error::InvalidPrior { min_eigenvalue: min })?;
    let cutoff = 1e-14 * scale * p as f64;
    let keep: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    let mut b = DMatrix::zeros(p, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..p {
            b[(r, c)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    Ok(b)
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pinv_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    if p == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = top * 1e-12 * p as f64;
    let mut out = DMatrix::zeros(p, p);
    for k in 0..p {
        let ev = eig.eigenvalues[k];
        if ev > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / ev;
        }
    }
    out
}

/// Inverse of an SPD matrix via Cholesky; `None` when not numerically PD.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let diag_min = (0..a.nrows()).map(|i| chol.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..a.nrows()).map(|i| chol.l_dirty()[(i, i)]).fold(0.0_f64, f64::max);
    if a.nrows() > 0 && diag_min <= diag_max * 1e-7 {
        return None;
    }
    Some(chol.inverse())
}

/// `ln Σ exp(xᵢ)` computed without overflow. Empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Weighted average of Bayes factors given on the log10 scale, returned on the
/// log10 scale. Zero weights are skipped.
pub fn log10_weighted_mean(log10_values: &[f64], weights: &[f64]) -> f64 {
    let terms: Vec<f64> = log10_values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| v * LN_10 + w.ln())
        .collect();
    log_sum_exp(&terms) / LN_10
}

pub fn log10_mean(log10_values: &[f64]) -> f64 {
    let w = vec![1.0 / log10_values.len() as f64; log10_values.len()];
    log10_weighted_mean(log10_values, &w)
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_square(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}
