use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparfaError};
use crate::model::FactorModel;

/// Largest K matched by exhaustive search; larger K uses the Hungarian method.
pub const EXHAUSTIVE_MAX_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub e_w: f64,
    pub e_c: f64,
    pub e_mu: f64,
    pub e_h: f64,
    /// `permutation[k]` is the estimated concept matched to true concept `k`.
    pub permutation: Vec<usize>,
    pub prediction_accuracy: Option<f64>,
    pub avg_prediction_likelihood: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.iter().map(|x| x * x).sum::<f64>().sqrt(), b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// `score[k][l]`: cosine of true W column `k` with estimated column `l`, plus
/// the same for the rows of C.
pub fn match_scores(w_true: &DMatrix<f64>, w_est: &DMatrix<f64>, c_true: &DMatrix<f64>, c_est: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = w_true.ncols();
    if w_est.ncols() != k || c_true.nrows() != k || c_est.nrows() != k || w_true.nrows() != w_est.nrows() || c_true.ncols() != c_est.ncols() {
        return Err(SparfaError::DimensionMismatch("truth and estimate shapes differ".into()));
    }
    let c_true_rows: Vec<Vec<f64>> = (0..k).map(|r| c_true.row(r).iter().copied().collect()).collect();
    let c_est_rows: Vec<Vec<f64>> = (0..k).map(|r| c_est.row(r).iter().copied().collect()).collect();
    Ok(DMatrix::from_fn(k, k, |a, b| {
        cosine(w_true.column(a).as_slice(), w_est.column(b).as_slice()) + cosine(&c_true_rows[a], &c_est_rows[b])
    }))
}

/// Permutation of the estimate's concepts that maximises the summed score.
pub fn match_permutation(
    w_true: &DMatrix<f64>,
    w_est: &DMatrix<f64>,
    c_true: &DMatrix<f64>,
    c_est: &DMatrix<f64>,
) -> Result<Vec<usize>> {
    let scores = match_scores(w_true, w_est, c_true, c_est)?;
    Ok(if scores.nrows() <= EXHAUSTIVE_MAX_K { best_permutation_exhaustive(&scores) } else { hungarian_max(&scores) })
}

/// Searches all `K!` assignments; ties keep the lexicographically first.
pub fn best_permutation_exhaustive(scores: &DMatrix<f64>) -> Vec<usize> {
    let k = scores.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut c = vec![0usize; k];
    let eval = |p: &[usize]| p.iter().enumerate().map(|(a, &b)| scores[(a, b)]).sum::<f64>();
    let consider = |p: &[usize], best: &mut Vec<usize>, best_score: &mut f64| {
        let s = eval(p);
        if s > *best_score + 1e-12 || (s >= *best_score - 1e-12 && p < best.as_slice()) {
            *best_score = s.max(*best_score);
            *best = p.to_vec();
        }
    };
    consider(&perm, &mut best, &mut best_score);
    // Heap's algorithm
    let mut i = 1;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            consider(&perm, &mut best, &mut best_score);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Maximum-weight assignment by the Hungarian method (O(K³)).
pub fn hungarian_max(scores: &DMatrix<f64>) -> Vec<usize> {
    let n = scores.nrows();
    if n == 0 {
        return Vec::new();
    }
    let big = scores.max();
    let cost = |i: usize, j: usize| big - scores[(i - 1, j - 1)];
    // potentials and matching, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

fn normalise_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    out
}

fn normalise_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    normalise_columns(&m.transpose()).transpose()
}

fn ratio(truth: &DMatrix<f64>, est: &DMatrix<f64>, name: &'static str) -> Result<f64> {
    let den = truth.norm_squared();
    if den == 0.0 {
        return Err(SparfaError::ZeroNorm(name));
    }
    Ok((truth - est).norm_squared() / den)
}

/// Support of W as a 0/1 matrix.
pub fn support(w: &DMatrix<f64>) -> DMatrix<f64> {
    w.map(|x| if x > 0.0 { 1.0 } else { 0.0 })
}

/// `E_W, E_C, E_μ, E_H` after matching concepts and normalising W columns
/// and C rows to unit norm. μ is compared as is.
pub fn eval_metrics(truth: &FactorModel, estimate: &FactorModel) -> Result<EvalReport> {
    let perm = match_permutation(&truth.w, &estimate.w, &truth.c, &estimate.c)?;
    if truth.mu.len() != estimate.mu.len() {
        return Err(SparfaError::DimensionMismatch("difficulty vectors differ in length".into()));
    }
    let w_est = DMatrix::from_fn(truth.w.nrows(), perm.len(), |i, k| estimate.w[(i, perm[k])]);
    let c_est = DMatrix::from_fn(perm.len(), truth.c.ncols(), |k, j| estimate.c[(perm[k], j)]);
    let mu_t = DMatrix::from_column_slice(truth.mu.len(), 1, truth.mu.as_slice());
    let mu_e = DMatrix::from_column_slice(estimate.mu.len(), 1, estimate.mu.as_slice());
    Ok(EvalReport {
        e_w: ratio(&normalise_columns(&truth.w), &normalise_columns(&w_est), "W")?,
        e_c: ratio(&normalise_rows(&truth.c), &normalise_rows(&c_est), "C")?,
        e_mu: ratio(&mu_t, &mu_e, "mu")?,
        e_h: ratio(&support(&truth.w), &support(&w_est), "H")?,
        permutation: perm,
        prediction_accuracy: None,
        avg_prediction_likelihood: None,
    })
}

/// Null baseline: the truth with questions (rows of W and entries of μ)
/// shuffled by `row_order` and learners (columns of C) by `col_order`, so the
/// factors keep their marginal law but lose their alignment.
pub fn permuted_truth_baseline(truth: &FactorModel, row_order: &[usize], col_order: &[usize]) -> Result<FactorModel> {
    if row_order.len() != truth.questions() || col_order.len() != truth.learners() {
        return Err(SparfaError::DimensionMismatch("permutation length differs from model size".into()));
    }
    let w = DMatrix::from_fn(truth.w.nrows(), truth.w.ncols(), |i, k| truth.w[(row_order[i], k)]);
    let c = DMatrix::from_fn(truth.c.nrows(), truth.c.ncols(), |k, j| truth.c[(k, col_order[j])]);
    let mu = DVector::from_fn(truth.mu.len(), |i, _| truth.mu[row_order[i]]);
    FactorModel::new(w, c, mu, truth.link)
}
