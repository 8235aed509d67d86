//! Small dense helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SparfaError};

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `σ²_max(A)` via the smaller of the two Gram matrices.
pub fn sigma_max_sq(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Err(SparfaError::InvalidArgument("empty matrix".into()));
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    Ok(max_eigenvalue_sym(&gram).max(0.0))
}

/// Cholesky factor of a symmetric matrix, with a trace-scaled jitter ladder
/// for Gram matrices that are only positive semi-definite in floating point.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch);
    }
    let scale = (sym.trace().abs() / sym.nrows().max(1) as f64).max(1e-300);
    let mut jitter = 1e-10 * scale;
    for _ in 0..7 {
        let mut shifted = sym.clone();
        for d in 0..shifted.nrows() {
            shifted[(d, d)] += jitter;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(SparfaError::NotPositiveDefinite)
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &DVector<f64>) -> f64 {
    v.norm()
}
