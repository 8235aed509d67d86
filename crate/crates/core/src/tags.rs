//! Mapping concepts to instructor-provided question tags.
//!
//! With a binary question–tag incidence `T`, each column `w_k` of W is
//! regressed onto the tags by non-negative basis pursuit denoising
//! `min ½‖w_k − T a_k‖² + η‖a_k‖₁, a_k ≥ 0`, giving the tag–concept matrix A.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SparfaError};
use crate::linalg::sigma_max_sq;
use crate::sparfa_m::soft_threshold_nonneg;

const BPDN_MAX_ITERS: usize = 20_000;
const KKT_TOL: f64 = 1e-9;

/// Binary `Q × M` question–tag incidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMatrix {
    pub t: DMatrix<f64>,
    pub tag_names: Vec<String>,
}

impl TagMatrix {
    pub fn new(t: DMatrix<f64>, tag_names: Vec<String>) -> Result<Self> {
        if t.ncols() != tag_names.len() {
            return Err(SparfaError::DimensionMismatch(format!(
                "{} tag columns, {} names",
                t.ncols(),
                tag_names.len()
            )));
        }
        if t.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("tag incidence entries must be 0 or 1"));
        }
        Ok(TagMatrix { t, tag_names })
    }

    /// Builds the incidence from `(question index, tag name)` pairs; tags are
    /// numbered in order of first appearance.
    pub fn from_pairs(questions: usize, pairs: &[(usize, String)]) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        for (_, tag) in pairs {
            if !names.contains(tag) {
                names.push(tag.clone());
            }
        }
        let mut t = DMatrix::zeros(questions, names.len());
        for (i, tag) in pairs {
            if *i >= questions {
                return Err(SparfaError::IndexOutOfRange { row: *i, col: 0, rows: questions, cols: names.len() });
            }
            let m = names.iter().position(|n| n == tag).expect("tag was registered");
            t[(*i, m)] = 1.0;
        }
        Ok(TagMatrix { t, tag_names: names })
    }

    pub fn questions(&self) -> usize {
        self.t.nrows()
    }

    pub fn tags(&self) -> usize {
        self.t.ncols()
    }
}

/// Non-negative `M × K` tag–concept matrix with the η used for each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTagMap {
    pub a: DMatrix<f64>,
    pub etas: Vec<f64>,
    pub tag_names: Vec<String>,
}

impl ConceptTagMap {
    /// Tags of concept `k` by decreasing weight, as fractions summing to one.
    pub fn ranked_tags(&self, k: usize) -> Vec<(String, f64)> {
        let weights = concept_tag_percentages(&self.a, k);
        let mut ranked: Vec<(String, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(m, &w)| (self.tag_names[m].clone(), w))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked
    }
}

fn bpdn_objective(t: &DMatrix<f64>, w: &DVector<f64>, a: &DVector<f64>, eta: f64) -> f64 {
    0.5 * (t * a - w).norm_squared() + eta * a.sum()
}

/// Largest KKT violation of the non-negative LASSO at `a`.
pub fn bpdn_kkt_residual(t: &DMatrix<f64>, w: &DVector<f64>, a: &DVector<f64>, eta: f64) -> f64 {
    let g = t.transpose() * (t * a - w);
    a.iter()
        .zip(g.iter())
        .map(|(&x, &gj)| if x > 0.0 { (gj + eta).abs() } else { (-(gj + eta)).max(0.0) })
        .fold(0.0, f64::max)
}

/// Solves the non-negative basis pursuit denoising problem by projected FISTA
/// with step `1/σ²_max(T)`, then polishes the support by an exact solve.
pub fn solve_bpdn_plus(t: &DMatrix<f64>, w: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    if !(eta >= 0.0) {
        return Err(invalid("eta must be >= 0"));
    }
    if t.nrows() != w.len() {
        return Err(SparfaError::DimensionMismatch(format!("T has {} rows, w has {}", t.nrows(), w.len())));
    }
    let m = t.ncols();
    let zero = DVector::zeros(m);
    if m == 0 {
        return Ok(zero);
    }
    let lip = sigma_max_sq(t)?;
    if lip == 0.0 {
        return Ok(zero);
    }
    let gram = t.transpose() * t;
    let tw = t.transpose() * w;
    let step = 1.0 / lip;
    let grad = |a: &DVector<f64>| &gram * a - &tw;

    let mut x = zero.clone();
    let mut y = zero.clone();
    let mut theta = 1.0f64;
    for it in 0..BPDN_MAX_ITERS {
        let g = grad(&y);
        let next = (&y - step * g).map(|v| soft_threshold_nonneg(v, step * eta));
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        y = &next + ((theta - 1.0) / theta_next) * (&next - &x);
        x = next;
        theta = theta_next;
        if it % 50 == 49 {
            if let Some(p) = polish(&gram, &tw, &x, eta) {
                if bpdn_kkt_residual(t, w, &p, eta) <= KKT_TOL {
                    return Ok(best_of(t, w, eta, p, x));
                }
            }
        }
    }
    Ok(x)
}

fn best_of(t: &DMatrix<f64>, w: &DVector<f64>, eta: f64, a: DVector<f64>, b: DVector<f64>) -> DVector<f64> {
    if bpdn_objective(t, w, &a, eta) <= bpdn_objective(t, w, &b, eta) {
        a
    } else {
        b
    }
}

/// On the support of `x`, solves `T_Sᵀ T_S a_S = T_Sᵀ w − η 1` exactly,
/// dropping coordinates that the exact solve drives to round-off level.
fn polish(gram: &DMatrix<f64>, tw: &DVector<f64>, x: &DVector<f64>, eta: f64) -> Option<DVector<f64>> {
    let mut support: Vec<usize> = (0..x.len()).filter(|&j| x[j] > 0.0).collect();
    let mut out = DVector::zeros(x.len());
    loop {
        if support.is_empty() {
            return Some(out);
        }
        let s = support.len();
        let sub = DMatrix::from_fn(s, s, |r, c| gram[(support[r], support[c])]);
        let rhs = DVector::from_fn(s, |r, _| tw[support[r]] - eta);
        let sol = sub.cholesky()?.solve(&rhs);
        let floor = 1e-12 * sol.amax().max(1.0);
        if sol.iter().any(|&v| v < -floor) {
            return None;
        }
        if sol.iter().all(|&v| v > floor) {
            for (&j, &v) in support.iter().zip(sol.iter()) {
                out[j] = v;
            }
            return Some(out);
        }
        support = support.into_iter().zip(sol.iter()).filter(|(_, &v)| v > floor).map(|(j, _)| j).collect();
    }
}

/// Relative reconstruction `‖w − T a‖² / ‖w‖²` (absolute when `w = 0`).
fn reconstruction_error(t: &DMatrix<f64>, w: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let r = (t * a - w).norm_squared();
    let d = w.norm_squared();
    if d > 0.0 {
        r / d
    } else {
        r
    }
}

/// Multipliers of `η_max = ‖Tᵀw‖_∞` forming the default η grid.
pub const ETA_GRID: [f64; 5] = [0.5, 0.2, 0.1, 0.05, 0.01];

/// Picks η from the default grid: the smallest reconstruction error among
/// solutions with at most `max_tags` active tags (ties to larger η).
pub fn select_eta(t: &DMatrix<f64>, w: &DVector<f64>, max_tags: usize) -> Result<(f64, DVector<f64>)> {
    let eta_max = (t.transpose() * w).max().max(0.0);
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for &factor in &ETA_GRID {
        let eta = factor * eta_max;
        let a = solve_bpdn_plus(t, w, eta)?;
        if a.iter().filter(|&&v| v > 0.0).count() > max_tags {
            continue;
        }
        let err = reconstruction_error(t, w, &a);
        if best.as_ref().is_none_or(|(_, e, _)| err < *e) {
            best = Some((eta, err, a));
        }
    }
    match best {
        Some((eta, _, a)) => Ok((eta, a)),
        None => {
            let eta = ETA_GRID[0] * eta_max;
            Ok((eta, solve_bpdn_plus(t, w, eta)?))
        }
    }
}

/// Fits every concept column independently; `eta = None` selects η per column
/// with at most three active tags.
pub fn fit_concept_tags(tags: &TagMatrix, w: &DMatrix<f64>, eta: Option<f64>) -> Result<ConceptTagMap> {
    if w.nrows() != tags.questions() {
        return Err(SparfaError::DimensionMismatch(format!(
            "W has {} rows, T has {}",
            w.nrows(),
            tags.questions()
        )));
    }
    let cols: Vec<Result<(f64, DVector<f64>)>> = (0..w.ncols())
        .into_par_iter()
        .map(|k| {
            let wk = w.column(k).into_owned();
            match eta {
                Some(e) => solve_bpdn_plus(&tags.t, &wk, e).map(|a| (e, a)),
                None => select_eta(&tags.t, &wk, 3),
            }
        })
        .collect();
    let mut a = DMatrix::zeros(tags.tags(), w.ncols());
    let mut etas = Vec::with_capacity(w.ncols());
    for (k, col) in cols.into_iter().enumerate() {
        let (e, ak) = col?;
        a.set_column(k, &ak);
        etas.push(e);
    }
    Ok(ConceptTagMap { a, etas, tag_names: tags.tag_names.clone() })
}

/// Column `k` of A normalised to sum to one; empty for an all-zero column.
pub fn concept_tag_percentages(a: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let col = a.column(k);
    let total: f64 = col.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    col.iter().map(|v| v / total).collect()
}

/// `"Name (46%)"` labels of the `top` heaviest tags.
pub fn format_top_tags(ranked: &[(String, f64)], top: usize) -> Vec<String> {
    ranked.iter().take(top).map(|(name, w)| format!("{name} ({:.0}%)", 100.0 * w)).collect()
}

/// Learner tag knowledge `U = A C` (`M × N`).
pub fn learner_tag_knowledge(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != c.nrows() {
        return Err(SparfaError::DimensionMismatch(format!("A is {}x{}, C is {}x{}", a.nrows(), a.ncols(), c.nrows(), c.ncols())));
    }
    Ok(a * c)
}

/// Average tag knowledge of the class: row means of U.
pub fn class_average(u: &DMatrix<f64>) -> DVector<f64> {
    if u.ncols() == 0 {
        return DVector::zeros(u.nrows());
    }
    DVector::from_fn(u.nrows(), |m, _| u.row(m).mean())
}
