use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{max_eigenvalue_sym, sigma_max_sq};
use crate::link::LinkKind;

/// A composite objective `f(x) + g(x)` with smooth `f` and a cheap prox for `g`.
pub trait Composite {
    fn smooth_value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn prox(&self, v: DVector<f64>, step: f64) -> DVector<f64>;
    fn penalty(&self, x: &DVector<f64>) -> f64;

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.smooth_value(x) + self.penalty(x)
    }
}

/// Runs `iters` FISTA steps with constant step `step`, calling `visit` on every
/// iterate `x_1..x_iters`. Returns the last iterate.
fn run_fista<P: Composite + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    step: f64,
    iters: usize,
    mut visit: impl FnMut(&DVector<f64>),
) -> DVector<f64> {
    let mut x_prev = x0.clone();
    let mut y = x0.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let grad = problem.gradient(&y);
        let x = problem.prox(&y - grad * step, step);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
        visit(&x);
        x_prev = x;
        t = t_next;
    }
    x_prev
}

/// FISTA that never returns a point worse than its start.
///
/// The outer alternating loop relies on every block update being a descent step.
pub fn fista<P: Composite + ?Sized>(problem: &P, x0: &DVector<f64>, step: f64, iters: usize) -> DVector<f64> {
    if iters == 0 {
        return x0.clone();
    }
    let last = run_fista(problem, x0, step, iters, |_| {});
    if problem.value(&last) <= problem.value(x0) {
        last
    } else {
        x0.clone()
    }
}

/// All iterates `x_0, x_1, ..., x_iters` of plain FISTA.
pub fn fista_trajectory<P: Composite + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    step: f64,
    iters: usize,
) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(iters + 1);
    out.push(x0.clone());
    run_fista(problem, x0, step, iters, |x| out.push(x.clone()));
    out
}

/// `max{x - τ, 0}`.
#[inline]
pub fn soft_threshold_nonneg(x: f64, tau: f64) -> f64 {
    (x - tau).max(0.0)
}

/// The per-question problem: fit `[w_i; μ_i]` against the augmented `C`
/// (concept rows followed by an all-ones row). The final coordinate is the
/// intrinsic difficulty: it carries the ℓ₂ term but no ℓ₁ shrinkage and no sign
/// constraint.
pub struct RowSubproblem<'a> {
    c_aug: &'a DMatrix<f64>,
    obs: &'a [(usize, bool)],
    lambda: f64,
    mu_w: f64,
    link: LinkKind,
}

impl<'a> RowSubproblem<'a> {
    pub fn new(c_aug: &'a DMatrix<f64>, obs: &'a [(usize, bool)], lambda: f64, mu_w: f64, link: LinkKind) -> Self {
        RowSubproblem {
            c_aug,
            obs,
            lambda,
            mu_w,
            link,
        }
    }

    #[inline]
    fn slack(&self, w: &DVector<f64>, j: usize) -> f64 {
        self.c_aug.column(j).dot(w)
    }

    /// `L · σ²_max(C_obs) + μ`.
    pub fn lipschitz(&self) -> f64 {
        let dim = self.c_aug.nrows();
        let mut gram = DMatrix::zeros(dim, dim);
        for &(j, _) in self.obs {
            let c = self.c_aug.column(j);
            gram.ger(1.0, &c, &c, 1.0);
        }
        self.link.scalar_lipschitz() * max_eigenvalue_sym(&gram).max(0.0) + self.mu_w
    }

    fn concepts(&self) -> usize {
        self.c_aug.nrows() - 1
    }
}

impl Composite for RowSubproblem<'_> {
    fn smooth_value(&self, w: &DVector<f64>) -> f64 {
        let nll: f64 = self
            .obs
            .iter()
            .map(|&(j, y)| -self.link.log_lik(y, self.slack(w, j)))
            .sum();
        nll + 0.5 * self.mu_w * w.norm_squared()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = w * self.mu_w;
        for &(j, y) in self.obs {
            let d = self.link.neg_log_lik_deriv(y, self.slack(w, j));
            g.axpy(d, &self.c_aug.column(j), 1.0);
        }
        g
    }

    fn prox(&self, mut v: DVector<f64>, step: f64) -> DVector<f64> {
        let k = self.concepts();
        let tau = self.lambda * step;
        for x in v.rows_mut(0, k).iter_mut() {
            *x = soft_threshold_nonneg(*x, tau);
        }
        v
    }

    fn penalty(&self, w: &DVector<f64>) -> f64 {
        self.lambda * w.rows(0, self.concepts()).iter().map(|x| x.abs()).sum::<f64>()
    }
}

/// The per-learner problem: fit `c_j` given `W` and the difficulties.
pub struct ColSubproblem<'a> {
    /// Q×(K+1), final column holds μ.
    w_aug: &'a DMatrix<f64>,
    obs: &'a [(usize, bool)],
    gamma: f64,
    link: LinkKind,
}

impl<'a> ColSubproblem<'a> {
    pub fn new(w_aug: &'a DMatrix<f64>, obs: &'a [(usize, bool)], gamma: f64, link: LinkKind) -> Self {
        ColSubproblem {
            w_aug,
            obs,
            gamma,
            link,
        }
    }

    fn concepts(&self) -> usize {
        self.w_aug.ncols() - 1
    }

    #[inline]
    fn slack(&self, c: &DVector<f64>, i: usize) -> f64 {
        let k = self.concepts();
        let mut z = self.w_aug[(i, k)];
        for r in 0..k {
            z += self.w_aug[(i, r)] * c[r];
        }
        z
    }

    /// `L · σ²_max(W_obs)`.
    pub fn lipschitz(&self) -> f64 {
        let k = self.concepts();
        let mut gram = DMatrix::zeros(k, k);
        for &(i, _) in self.obs {
            let w = self.w_aug.row(i).columns(0, k).transpose();
            gram.ger(1.0, &w, &w, 1.0);
        }
        self.link.scalar_lipschitz() * max_eigenvalue_sym(&gram).max(0.0)
    }
}

impl Composite for ColSubproblem<'_> {
    fn smooth_value(&self, c: &DVector<f64>) -> f64 {
        self.obs
            .iter()
            .map(|&(i, y)| -self.link.log_lik(y, self.slack(c, i)))
            .sum()
    }

    fn gradient(&self, c: &DVector<f64>) -> DVector<f64> {
        let k = self.concepts();
        let mut g = DVector::zeros(k);
        for &(i, y) in self.obs {
            let d = self.link.neg_log_lik_deriv(y, self.slack(c, i));
            for r in 0..k {
                g[r] += d * self.w_aug[(i, r)];
            }
        }
        g
    }

    fn prox(&self, v: DVector<f64>, step: f64) -> DVector<f64> {
        v / (1.0 + self.gamma * step)
    }

    fn penalty(&self, c: &DVector<f64>) -> f64 {
        0.5 * self.gamma * c.norm_squared()
    }
}

/// Step-size constant for the question subproblem from an explicit `C` block.
pub fn lipschitz_l1(c_sub: &DMatrix<f64>, mu_w: f64, link: LinkKind) -> Result<f64> {
    Ok(link.scalar_lipschitz() * sigma_max_sq(c_sub)? + mu_w)
}

/// Step-size constant for the learner subproblem from an explicit `W` block.
pub fn lipschitz_l2(w_sub: &DMatrix<f64>, link: LinkKind) -> Result<f64> {
    Ok(link.scalar_lipschitz() * sigma_max_sq(w_sub)?)
}

/// Solves the question subproblem from `w0` with `t = 1/L₁`.
pub fn fista_rr1(problem: &RowSubproblem<'_>, w0: &DVector<f64>, iters: usize) -> Result<DVector<f64>> {
    if w0.len() != problem.c_aug.nrows() {
        return Err(invalid("w0 length must be K+1"));
    }
    let l = problem.lipschitz();
    if iters == 0 {
        return Ok(w0.clone());
    }
    if l <= 0.0 {
        // no data and no ℓ₂ term: any difficulty is optimal, concepts go to 0
        let mut w = w0.clone();
        let k = problem.concepts();
        w.rows_mut(0, k).fill(0.0);
        return Ok(w);
    }
    Ok(fista(problem, w0, 1.0 / l, iters))
}

/// Solves the learner subproblem from `c0` with `t = 1/L₂`.
pub fn fista_rr2(problem: &ColSubproblem<'_>, c0: &DVector<f64>, iters: usize) -> Result<DVector<f64>> {
    if c0.len() != problem.concepts() {
        return Err(invalid("c0 length must be K"));
    }
    if iters == 0 {
        return Ok(c0.clone());
    }
    let l = problem.lipschitz();
    if l <= 0.0 {
        // likelihood does not depend on c_j; the ridge term alone is minimised at 0
        return Ok(DVector::zeros(c0.len()));
    }
    Ok(fista(problem, c0, 1.0 / l, iters))
}
