use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fista::{fista_rr1, fista_rr2, ColSubproblem, Composite, RowSubproblem};
use crate::error::{invalid, Result, SparfaError};
use crate::link::LinkKind;
use crate::model::{Dimensions, FactorModel, ResponseMatrix};

/// Knobs for the alternating solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparfaMConfig {
    /// ℓ₁ weight on the concept associations.
    pub lambda_l1: f64,
    /// Ridge weight on C.
    pub gamma_c: f64,
    /// Ridge weight on each `[w_i; μ_i]`.
    pub mu_w: f64,
    pub inner_iters: usize,
    pub max_outer: usize,
    /// Stop once the relative objective decrease falls below this.
    pub outer_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub link: LinkKind,
    /// Re-seed near-duplicate concept rows of C and empty columns of W every
    /// few outer iterations. Voids the monotone-descent guarantee.
    pub reinit_heuristics: bool,
}

impl Default for SparfaMConfig {
    fn default() -> Self {
        SparfaMConfig {
            lambda_l1: 1.0,
            gamma_c: 0.1,
            mu_w: 1e-4,
            inner_iters: 10,
            max_outer: 500,
            outer_tol: 1e-6,
            restarts: 1,
            seed: 0,
            link: LinkKind::Probit,
            reinit_heuristics: false,
        }
    }
}

impl SparfaMConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 > 0.0) {
            return Err(invalid("lambda_l1 must be > 0"));
        }
        if !(self.gamma_c > 0.0) {
            return Err(invalid("gamma_c must be > 0"));
        }
        if !(self.mu_w >= 0.0) {
            return Err(invalid("mu_w must be >= 0"));
        }
        if self.inner_iters == 0 || self.max_outer == 0 || self.restarts == 0 {
            return Err(invalid("inner_iters, max_outer and restarts must be positive"));
        }
        if !(self.outer_tol >= 0.0) {
            return Err(invalid("outer_tol must be >= 0"));
        }
        Ok(())
    }
}

/// Objective history of the winning restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Objective at initialisation followed by one value per outer iteration.
    pub objectives: Vec<f64>,
    pub final_objective: f64,
    pub iterations: usize,
    pub winning_restart: usize,
    pub restart_objectives: Vec<f64>,
}

/// `−Σ log p(Y|Z) + λ Σ‖w_i‖₁ + (μ/2) Σ‖[w_i; μ_i]‖² + (γ/2)‖C‖²_F`.
pub fn objective(model: &FactorModel, data: &ResponseMatrix, config: &SparfaMConfig) -> Result<f64> {
    if model.w.iter().any(|&v| v < 0.0) {
        return Err(invalid("negative W entry: objective is infinite"));
    }
    let nll = -model.log_likelihood(data)?;
    let l1: f64 = model.w.iter().sum();
    let l2 = model.w.norm_squared() + model.mu.norm_squared();
    Ok(nll + config.lambda_l1 * l1 + 0.5 * config.mu_w * l2 + 0.5 * config.gamma_c * model.c.norm_squared())
}

struct Factors {
    /// Q×(K+1), final column μ.
    w_aug: DMatrix<f64>,
    /// (K+1)×N, final row ones.
    c_aug: DMatrix<f64>,
}

impl Factors {
    fn random(q: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w_aug = DMatrix::zeros(q, k + 1);
        for kk in 0..k {
            for i in 0..q {
                let x: f64 = rng.sample(StandardNormal);
                w_aug[(i, kk)] = x.abs();
            }
        }
        let mut c_aug = DMatrix::from_element(k + 1, n, 1.0);
        for j in 0..n {
            for kk in 0..k {
                c_aug[(kk, j)] = rng.sample(StandardNormal);
            }
        }
        Factors { w_aug, c_aug }
    }

    fn k(&self) -> usize {
        self.w_aug.ncols() - 1
    }

    fn model(&self, link: LinkKind) -> FactorModel {
        let k = self.k();
        FactorModel {
            w: self.w_aug.columns(0, k).into_owned(),
            c: self.c_aug.rows(0, k).into_owned(),
            mu: self.w_aug.column(k).into_owned(),
            link,
        }
    }

    fn objective(&self, data: &ResponseMatrix, config: &SparfaMConfig) -> f64 {
        let rows: f64 = (0..data.questions())
            .map(|i| {
                RowSubproblem::new(&self.c_aug, data.row(i), config.lambda_l1, config.mu_w, config.link)
                    .value(&self.w_aug.row(i).transpose())
            })
            .sum();
        let k = self.k();
        rows + 0.5 * config.gamma_c * self.c_aug.rows(0, k).norm_squared()
    }

    fn update_c(&mut self, data: &ResponseMatrix, config: &SparfaMConfig) -> Result<()> {
        let k = self.k();
        let w_aug = &self.w_aug;
        let c_aug = &self.c_aug;
        let cols: Vec<DVector<f64>> = (0..data.learners())
            .into_par_iter()
            .map(|j| {
                let p = ColSubproblem::new(w_aug, data.col(j), config.gamma_c, config.link);
                let c0 = c_aug.column(j).rows(0, k).into_owned();
                fista_rr2(&p, &c0, config.inner_iters)
            })
            .collect::<Result<_>>()?;
        for (j, c) in cols.into_iter().enumerate() {
            self.c_aug.column_mut(j).rows_mut(0, k).copy_from(&c);
        }
        Ok(())
    }

    fn update_w(&mut self, data: &ResponseMatrix, config: &SparfaMConfig) -> Result<()> {
        let w_aug = &self.w_aug;
        let c_aug = &self.c_aug;
        let rows: Vec<DVector<f64>> = (0..data.questions())
            .into_par_iter()
            .map(|i| {
                let p = RowSubproblem::new(c_aug, data.row(i), config.lambda_l1, config.mu_w, config.link);
                fista_rr1(&p, &w_aug.row(i).transpose(), config.inner_iters)
            })
            .collect::<Result<_>>()?;
        for (i, w) in rows.into_iter().enumerate() {
            self.w_aug.row_mut(i).copy_from(&w.transpose());
        }
        Ok(())
    }

    /// Returns true if anything was re-initialised.
    fn reinitialise(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let k = self.k();
        let mut touched = false;
        for a in 0..k {
            for b in (a + 1)..k {
                let ra = self.c_aug.row(a);
                let rb = self.c_aug.row(b);
                let denom = ra.norm() * rb.norm();
                if denom > 0.0 && ra.dot(&rb).abs() / denom > 0.95 {
                    for j in 0..self.c_aug.ncols() {
                        self.c_aug[(b, j)] = rng.sample(StandardNormal);
                    }
                    touched = true;
                }
            }
        }
        for kk in 0..k {
            if self.w_aug.column(kk).iter().all(|&v| v == 0.0) {
                for i in 0..self.w_aug.nrows() {
                    let x: f64 = rng.sample(StandardNormal);
                    self.w_aug[(i, kk)] = x.abs();
                }
                touched = true;
            }
        }
        touched
    }
}

struct RunResult {
    factors: Factors,
    objectives: Vec<f64>,
}

fn run_once(data: &ResponseMatrix, k: usize, config: &SparfaMConfig, restart: usize) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let mut f = Factors::random(data.questions(), data.learners(), k, &mut rng);
    let mut objectives = vec![f.objective(data, config)];
    for outer in 1..=config.max_outer {
        f.update_c(data, config)?;
        f.update_w(data, config)?;
        let reset = config.reinit_heuristics && outer % 5 == 0 && f.reinitialise(&mut rng);
        let cur = f.objective(data, config);
        let prev = *objectives.last().expect("non-empty");
        objectives.push(cur);
        if !reset && (prev - cur) <= config.outer_tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(RunResult { factors: f, objectives })
}

/// Fits W, C and μ by alternating FISTA; best of `config.restarts` runs.
pub fn fit_sparfa_m(data: &ResponseMatrix, k: usize, config: &SparfaMConfig) -> Result<(FactorModel, FitTrace)> {
    config.validate()?;
    Dimensions::new(data.questions(), data.learners(), k)?;
    if data.observed_count() == 0 {
        return Err(SparfaError::NoObservations);
    }
    let runs: Vec<RunResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_once(data, k, config, r))
        .collect::<Result<_>>()?;
    let restart_objectives: Vec<f64> = runs.iter().map(|r| *r.objectives.last().unwrap()).collect();
    let (winner, _) = restart_objectives
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (r, &v)| if v < best.1 { (r, v) } else { best });
    let run = runs.into_iter().nth(winner).expect("winner exists");
    let trace = FitTrace {
        final_objective: *run.objectives.last().unwrap(),
        iterations: run.objectives.len() - 1,
        objectives: run.objectives,
        winning_restart: winner,
        restart_objectives,
    };
    Ok((run.factors.model(config.link), trace))
}

/// `−2 log L + df · ln |Ω_obs|` with `df = nnz(W) + K·N + Q`.
pub fn bic(model: &FactorModel, data: &ResponseMatrix) -> Result<f64> {
    let ll = model.log_likelihood(data)?;
    let df = model.w_nonzeros() + model.concepts() * model.learners() + model.questions();
    let n_obs = data.observed_count().max(1) as f64;
    Ok(-2.0 * ll + df as f64 * n_obs.ln())
}

/// Index of the smallest score; ties go to the larger λ.
pub fn select_min_bic(scores: &[(f64, f64)]) -> Result<usize> {
    if scores.is_empty() {
        return Err(SparfaError::EmptyGrid);
    }
    let mut best = 0;
    for (idx, &(lam, b)) in scores.iter().enumerate().skip(1) {
        let (best_lam, best_b) = scores[best];
        if b < best_b || (b == best_b && lam > best_lam) {
            best = idx;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct BicSelection {
    pub lambda: f64,
    /// `(λ, BIC)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
    pub model: FactorModel,
    pub trace: FitTrace,
}

/// Fits once per grid value and keeps the λ with the smallest BIC.
pub fn bic_select_lambda(
    data: &ResponseMatrix,
    k: usize,
    lambda_grid: &[f64],
    config: &SparfaMConfig,
) -> Result<BicSelection> {
    if lambda_grid.is_empty() {
        return Err(SparfaError::EmptyGrid);
    }
    let mut fits = Vec::with_capacity(lambda_grid.len());
    let mut scores = Vec::with_capacity(lambda_grid.len());
    for &lam in lambda_grid {
        let cfg = SparfaMConfig {
            lambda_l1: lam,
            ..config.clone()
        };
        let (model, trace) = fit_sparfa_m(data, k, &cfg)?;
        scores.push((lam, bic(&model, data)?));
        fits.push((model, trace));
    }
    let best = select_min_bic(&scores)?;
    let (model, trace) = fits.swap_remove(best);
    Ok(BicSelection {
        lambda: lambda_grid[best],
        scores,
        model,
        trace,
    })
}
