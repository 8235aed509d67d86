//! Active-set non-negative least squares.

use nalgebra::{DMatrix, DVector};

/// Solves `min ‖A x − b‖₂` subject to `x ≥ 0` (Lawson–Hanson).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 || a.nrows() == 0 {
        return x;
    }
    let atb = a.transpose() * b;
    let ata = a.transpose() * a;
    let tol = 1e-12 * ata.diagonal().amax().max(1.0) * (n as f64);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let grad = &atb - &ata * &x;
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&p, &q| grad[p].total_cmp(&grad[q]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z = solve_subset(&ata, &atb, &idx);
            if z.iter().all(|&v| v > 0.0) {
                for (&j, &v) in idx.iter().zip(z.iter()) {
                    x[j] = v;
                }
                break;
            }
            // step towards z until the first passive coordinate hits zero
            let mut alpha = f64::INFINITY;
            for (&j, &v) in idx.iter().zip(z.iter()) {
                if v <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - v));
                }
            }
            for (&j, &v) in idx.iter().zip(z.iter()) {
                x[j] += alpha * (v - x[j]);
                if x[j] <= 1e-15 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn solve_subset(ata: &DMatrix<f64>, atb: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let m = idx.len();
    let sub = DMatrix::from_fn(m, m, |r, c| ata[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(m, |r, _| atb[idx[r]]);
    if let Some(ch) = sub.clone().cholesky() {
        return ch.solve(&rhs);
    }
    sub.svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(m))
}

/// Least-squares residual `‖A x − b‖²`.
pub fn residual_sq(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a * x - b).norm_squared()
}
