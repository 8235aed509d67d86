use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::posterior::spike_slab_posterior;
use super::truncnorm::{sample_rect_normal, sample_truncnorm, Side};
use crate::error::{invalid, Result, SparfaError};
use crate::linalg::cholesky_jittered;
use crate::link::{norm_quantile, LinkKind};
use crate::model::{Dimensions, FactorModel, ResponseMatrix};

const R_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparfaBHyperparams {
    /// Gamma shape for the rates `λ_k`.
    pub alpha: f64,
    /// Gamma rate for the rates `λ_k`.
    pub beta: f64,
    pub e: f64,
    pub f: f64,
    /// Inverse-Wishart scale.
    pub v0: DMatrix<f64>,
    /// Inverse-Wishart degrees of freedom.
    pub h: f64,
    pub mu0: f64,
    pub v_mu: f64,
}

impl SparfaBHyperparams {
    /// `h = K+1, v_μ = 1, α = 1, β = 1.5, e = 1, f = 1.5, V₀ = I, μ₀ = 0`.
    pub fn defaults(k: usize) -> Self {
        SparfaBHyperparams {
            alpha: 1.0,
            beta: 1.5,
            e: 1.0,
            f: 1.5,
            v0: DMatrix::identity(k, k),
            h: k as f64 + 1.0,
            mu0: 0.0,
            v_mu: 1.0,
        }
    }

    /// Defaults with `μ₀ = Φ⁻¹(p)` for the observed correct-answer rate `p`.
    pub fn for_data(k: usize, data: &ResponseMatrix) -> Self {
        let mut hyper = Self::defaults(k);
        if let Some(p) = data.correct_rate() {
            hyper.mu0 = norm_quantile(p.clamp(1e-6, 1.0 - 1e-6));
        }
        hyper
    }

    pub fn concepts(&self) -> usize {
        self.v0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.concepts();
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("e", self.e), ("f", self.f), ("v_mu", self.v_mu)] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be > 0")));
            }
        }
        if !self.mu0.is_finite() {
            return Err(invalid("mu0 must be finite"));
        }
        if self.v0.ncols() != k || k == 0 {
            return Err(invalid("V0 must be a non-empty square matrix"));
        }
        if (&self.v0 - self.v0.transpose()).amax() > 1e-12 * self.v0.amax().max(1.0) {
            return Err(invalid("V0 must be symmetric"));
        }
        if self.v0.clone().cholesky().is_none() {
            return Err(SparfaError::NotPositiveDefinite);
        }
        if !(self.h > k as f64 - 1.0) {
            return Err(invalid("h must exceed K - 1"));
        }
        Ok(())
    }
}

/// One state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// Latent slack; only observed positions are meaningful.
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub v: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub r: DVector<f64>,
    /// Slab weights `1 − R̂_{i,k}` computed in the latest W step.
    pub activity: DMatrix<f64>,
}

impl GibbsState {
    /// Draws an initial state from the prior, then samples Z given it.
    pub fn initialise<R: Rng + ?Sized>(
        data: &ResponseMatrix,
        k: usize,
        hyper: &SparfaBHyperparams,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        if hyper.concepts() != k {
            return Err(SparfaError::DimensionMismatch(format!("V0 is {0}x{0}, K = {k}", hyper.concepts())));
        }
        Dimensions::new(data.questions(), data.learners(), k)?;
        let (q, n) = (data.questions(), data.learners());
        let lambda = DVector::from_element(k, hyper.alpha / hyper.beta);
        let r = DVector::from_element(k, hyper.e / (hyper.e + hyper.f));
        let exp = Exp::new(hyper.alpha / hyper.beta).map_err(|e| invalid(e.to_string()))?;
        let w = DMatrix::from_fn(q, k, |_, kk| if rng.random::<f64>() < r[kk] { exp.sample(rng) } else { 0.0 });
        let c = DMatrix::from_fn(k, n, |_, _| rng.sample(StandardNormal));
        let mut state = GibbsState {
            z: DMatrix::zeros(q, n),
            w,
            c,
            mu: DVector::from_element(q, hyper.mu0),
            v: hyper.v0.clone(),
            lambda,
            r,
            activity: DMatrix::from_element(q, k, hyper.e / (hyper.e + hyper.f)),
        };
        state.sample_latent(data, rng)?;
        Ok(state)
    }

    /// Starts the chain at a point estimate, e.g. a SPARFA-M fit. V, λ and r
    /// take their conditional means given that estimate; Z is then sampled.
    pub fn from_estimate<R: Rng + ?Sized>(
        data: &ResponseMatrix,
        init: &FactorModel,
        hyper: &SparfaBHyperparams,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        let (q, n, k) = (data.questions(), data.learners(), init.concepts());
        if init.questions() != q || init.learners() != n {
            return Err(SparfaError::DimensionMismatch("initial estimate does not match the data".into()));
        }
        if hyper.concepts() != k {
            return Err(SparfaError::DimensionMismatch(format!("V0 is {0}x{0}, K = {k}", hyper.concepts())));
        }
        let w = init.w.map(|x| x.max(0.0));
        let scale = &hyper.v0 + &init.c * init.c.transpose();
        // mean of IW(scale, N + h), defined once N + h > K + 1
        let v = scale / (n as f64 + hyper.h - k as f64 - 1.0).max(1.0);
        let mut state = GibbsState {
            z: DMatrix::zeros(q, n),
            w,
            c: init.c.clone(),
            mu: init.mu.clone(),
            v,
            lambda: DVector::zeros(k),
            r: DVector::zeros(k),
            activity: DMatrix::zeros(q, k),
        };
        for (kk, b) in state.active_counts().into_iter().enumerate() {
            let b = b as f64;
            state.lambda[kk] = (hyper.alpha + b) / (hyper.beta + state.w.column(kk).sum());
            state.r[kk] = ((hyper.e + b) / (hyper.e + hyper.f + q as f64)).clamp(R_FLOOR, 1.0 - R_FLOOR);
        }
        state.activity = state.w.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        state.sample_latent(data, rng)?;
        Ok(state)
    }

    pub fn concepts(&self) -> usize {
        self.w.ncols()
    }

    /// Checks the chain invariants (W ≥ 0, V SPD, r ∈ (0,1), sign-consistent Z).
    pub fn check_invariants(&self, data: &ResponseMatrix) -> Result<()> {
        if self.w.iter().any(|&x| !(x >= 0.0)) {
            return Err(invalid("W has negative entries"));
        }
        if (&self.v - self.v.transpose()).amax() > 1e-10 * self.v.amax().max(1.0) {
            return Err(invalid("V is not symmetric"));
        }
        let min_eig = self.v.clone().symmetric_eigen().eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(SparfaError::NotPositiveDefinite);
        }
        if self.r.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(invalid("r outside (0, 1)"));
        }
        for (i, j, y) in data.observed() {
            let z = self.z[(i, j)];
            if (z > 0.0) != y {
                return Err(invalid(format!("Z[{i},{j}] = {z} inconsistent with Y")));
            }
        }
        Ok(())
    }

    fn slack(&self, i: usize, j: usize) -> f64 {
        let mut z = self.mu[i];
        for k in 0..self.concepts() {
            z += self.w[(i, k)] * self.c[(k, j)];
        }
        z
    }

    /// Step 1.
    fn sample_latent<R: Rng + ?Sized>(&mut self, data: &ResponseMatrix, rng: &mut R) -> Result<()> {
        for (i, j, y) in data.observed() {
            let side = if y { Side::Positive } else { Side::Negative };
            self.z[(i, j)] = sample_truncnorm(self.slack(i, j), 1.0, side, rng)?;
        }
        Ok(())
    }

    /// Step 2: conjugate normal update of each difficulty.
    fn sample_difficulty<R: Rng + ?Sized>(&mut self, data: &ResponseMatrix, hyper: &SparfaBHyperparams, rng: &mut R) {
        for i in 0..data.questions() {
            let obs = data.row(i);
            let var = 1.0 / (1.0 / hyper.v_mu + obs.len() as f64);
            let resid: f64 = obs
                .iter()
                .map(|&(j, _)| {
                    let wc: f64 = (0..self.concepts()).map(|k| self.w[(i, k)] * self.c[(k, j)]).sum();
                    self.z[(i, j)] - wc
                })
                .sum();
            let mean = var * (hyper.mu0 / hyper.v_mu + resid);
            let eps: f64 = rng.sample(StandardNormal);
            self.mu[i] = mean + var.sqrt() * eps;
        }
    }

    /// Step 3: `c_j ~ N(M_j W̃ᵀ(z̃_j − μ̃), M_j)`, `M_j = (V⁻¹ + W̃ᵀW̃)⁻¹`.
    fn sample_knowledge<R: Rng + ?Sized>(&mut self, data: &ResponseMatrix, rng: &mut R) -> Result<()> {
        let k = self.concepts();
        let v_inv = cholesky_jittered(&self.v)?.inverse();
        for j in 0..data.learners() {
            let mut precision = v_inv.clone();
            let mut rhs = DVector::zeros(k);
            for &(i, _) in data.col(j) {
                let w = self.w.row(i).transpose();
                precision.ger(1.0, &w, &w, 1.0);
                rhs.axpy(self.z[(i, j)] - self.mu[i], &w, 1.0);
            }
            let chol = cholesky_jittered(&precision)?;
            let mean = chol.solve(&rhs);
            let eps = DVector::from_fn(k, |_, _| rng.sample(StandardNormal));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&eps)
                .ok_or(SparfaError::NotPositiveDefinite)?;
            self.c.set_column(j, &(mean + noise));
        }
        Ok(())
    }

    /// Step 4.
    fn sample_covariance<R: Rng + ?Sized>(
        &mut self,
        data: &ResponseMatrix,
        hyper: &SparfaBHyperparams,
        rng: &mut R,
    ) -> Result<()> {
        let scale = &hyper.v0 + &self.c * self.c.transpose();
        self.v = sample_inverse_wishart(&scale, data.learners() as f64 + hyper.h, rng)?;
        Ok(())
    }

    /// Step 5: spike-slab update of every `W_{i,k}`, row by row.
    fn sample_associations<R: Rng + ?Sized>(&mut self, data: &ResponseMatrix, rng: &mut R) -> Result<()> {
        let k = self.concepts();
        for i in 0..data.questions() {
            let obs = data.row(i);
            let mut resid: Vec<f64> = obs.iter().map(|&(j, _)| self.z[(i, j)] - self.slack(i, j)).collect();
            for kk in 0..k {
                let old = self.w[(i, kk)];
                let mut sum_cc = 0.0;
                let mut sum_rc = 0.0;
                for (e, &(j, _)) in resid.iter().zip(obs) {
                    let ckj = self.c[(kk, j)];
                    sum_cc += ckj * ckj;
                    sum_rc += (e + old * ckj) * ckj;
                }
                let (activity, new) = if sum_cc > 0.0 {
                    let post = spike_slab_posterior(sum_rc / sum_cc, 1.0 / sum_cc, self.lambda[kk], self.r[kk])?;
                    let a = post.activity();
                    let value = if rng.random::<f64>() < a {
                        sample_rect_normal(post.mean, post.var, self.lambda[kk], rng)?
                    } else {
                        0.0
                    };
                    (a, value)
                } else {
                    // no information about this entry: draw from the prior
                    let a = self.r[kk];
                    let value = if rng.random::<f64>() < a {
                        Exp::new(self.lambda[kk]).map_err(|e| invalid(e.to_string()))?.sample(rng)
                    } else {
                        0.0
                    };
                    (a, value)
                };
                self.activity[(i, kk)] = activity;
                if new != old {
                    for (e, &(j, _)) in resid.iter_mut().zip(obs) {
                        *e -= (new - old) * self.c[(kk, j)];
                    }
                    self.w[(i, kk)] = new;
                }
            }
        }
        Ok(())
    }

    fn active_counts(&self) -> Vec<usize> {
        (0..self.concepts())
            .map(|k| self.w.column(k).iter().filter(|&&x| x != 0.0).count())
            .collect()
    }

    /// Step 6.
    fn sample_rates<R: Rng + ?Sized>(&mut self, hyper: &SparfaBHyperparams, rng: &mut R) -> Result<()> {
        for (k, b) in self.active_counts().into_iter().enumerate() {
            let shape = hyper.alpha + b as f64;
            let rate = hyper.beta + self.w.column(k).sum();
            let g = Gamma::new(shape, 1.0 / rate).map_err(|e| invalid(e.to_string()))?;
            self.lambda[k] = g.sample(rng).max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// Step 7.
    fn sample_inclusion<R: Rng + ?Sized>(&mut self, hyper: &SparfaBHyperparams, rng: &mut R) -> Result<()> {
        let q = self.w.nrows() as f64;
        for (k, b) in self.active_counts().into_iter().enumerate() {
            let beta = Beta::new(hyper.e + b as f64, hyper.f + q - b as f64).map_err(|e| invalid(e.to_string()))?;
            self.r[k] = beta.sample(rng).clamp(R_FLOOR, 1.0 - R_FLOOR);
        }
        Ok(())
    }
}

/// Draws `V ~ IW(scale, dof)` through the Bartlett decomposition of the
/// corresponding Wishart draw of `V⁻¹`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let k = scale.nrows();
    if !(dof > k as f64 - 1.0) {
        return Err(invalid("inverse-Wishart dof must exceed K - 1"));
    }
    let mut jittered = scale.clone();
    let bump = 1e-10 * scale.trace().abs();
    for d in 0..k {
        jittered[(d, d)] += bump;
    }
    let precision_scale = cholesky_jittered(&jittered)?.inverse();
    let l = cholesky_jittered(&precision_scale)?.l();
    let mut a = DMatrix::zeros(k, k);
    for r in 0..k {
        let chi = ChiSquared::new(dof - r as f64).map_err(|e| invalid(e.to_string()))?;
        a[(r, r)] = chi.sample(rng).sqrt();
        for c in 0..r {
            a[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let t = l * a;
    let t_inv = t
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or(SparfaError::NotPositiveDefinite)?;
    let v = t_inv.transpose() * &t_inv;
    Ok((&v + v.transpose()) * 0.5)
}

/// Which conditional updates a sweep performs; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPlan {
    pub latent: bool,
    pub difficulty: bool,
    pub knowledge: bool,
    pub covariance: bool,
    pub associations: bool,
    pub rates: bool,
    pub inclusion: bool,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            latent: true,
            difficulty: true,
            knowledge: true,
            covariance: true,
            associations: true,
            rates: true,
            inclusion: true,
        }
    }
}

impl SweepPlan {
    pub fn none() -> Self {
        SweepPlan {
            latent: false,
            difficulty: false,
            knowledge: false,
            covariance: false,
            associations: false,
            rates: false,
            inclusion: false,
        }
    }
}

/// One full Gibbs sweep over Z, μ, C, V, W, λ, r in that order.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &ResponseMatrix,
    hyper: &SparfaBHyperparams,
    rng: &mut R,
) -> Result<()> {
    gibbs_sweep_with(state, data, hyper, SweepPlan::default(), rng)
}

pub fn gibbs_sweep_with<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &ResponseMatrix,
    hyper: &SparfaBHyperparams,
    plan: SweepPlan,
    rng: &mut R,
) -> Result<()> {
    if plan.latent {
        state.sample_latent(data, rng)?;
    }
    if plan.difficulty {
        state.sample_difficulty(data, hyper, rng);
    }
    if plan.knowledge {
        state.sample_knowledge(data, rng)?;
    }
    if plan.covariance {
        state.sample_covariance(data, hyper, rng)?;
    }
    if plan.associations {
        state.sample_associations(data, rng)?;
    }
    if plan.rates {
        state.sample_rates(hyper, rng)?;
    }
    if plan.inclusion {
        state.sample_inclusion(hyper, rng)?;
    }
    Ok(())
}

/// Posterior moments over the retained samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub w_mean: DMatrix<f64>,
    pub w_var: DMatrix<f64>,
    pub c_mean: DMatrix<f64>,
    pub c_var: DMatrix<f64>,
    pub mu_mean: DVector<f64>,
    pub mu_var: DVector<f64>,
    /// Posterior mean of the slab weight `1 − R̂_{i,k}`.
    pub activity: DMatrix<f64>,
    pub samples: usize,
    pub burn_in: usize,
}

#[derive(Default)]
struct Moments {
    sum: DMatrix<f64>,
    sum_sq: DMatrix<f64>,
}

impl Moments {
    fn new(r: usize, c: usize) -> Self {
        Moments {
            sum: DMatrix::zeros(r, c),
            sum_sq: DMatrix::zeros(r, c),
        }
    }

    fn push(&mut self, x: &DMatrix<f64>) {
        self.sum += x;
        self.sum_sq += x.component_mul(x);
    }

    fn finish(self, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let inv = 1.0 / n as f64;
        let mean = self.sum * inv;
        let var = (self.sum_sq * inv - mean.component_mul(&mean)).map(|v| v.max(0.0));
        (mean, var)
    }
}

/// Runs `burn_in` discarded sweeps from a prior draw, then summarises
/// `n_samples` sweeps.
pub fn run_sparfa_b<R: Rng + ?Sized>(
    data: &ResponseMatrix,
    k: usize,
    hyper: &SparfaBHyperparams,
    burn_in: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    check_lengths(burn_in, n_samples)?;
    let state = GibbsState::initialise(data, k, hyper, rng)?;
    run_chain(state, data, hyper, burn_in, n_samples, rng)
}

/// Like [`run_sparfa_b`] but starts the chain at `init`.
pub fn run_sparfa_b_from<R: Rng + ?Sized>(
    data: &ResponseMatrix,
    init: &FactorModel,
    hyper: &SparfaBHyperparams,
    burn_in: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    check_lengths(burn_in, n_samples)?;
    let state = GibbsState::from_estimate(data, init, hyper, rng)?;
    run_chain(state, data, hyper, burn_in, n_samples, rng)
}

fn check_lengths(burn_in: usize, n_samples: usize) -> Result<()> {
    if burn_in == 0 || n_samples == 0 {
        return Err(invalid("burn_in and n_samples must be >= 1"));
    }
    Ok(())
}

fn run_chain<R: Rng + ?Sized>(
    mut state: GibbsState,
    data: &ResponseMatrix,
    hyper: &SparfaBHyperparams,
    burn_in: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    let k = state.concepts();
    for _ in 0..burn_in {
        gibbs_sweep(&mut state, data, hyper, rng)?;
    }
    let (q, n) = (data.questions(), data.learners());
    let mut w = Moments::new(q, k);
    let mut c = Moments::new(k, n);
    let mut mu = Moments::new(q, 1);
    let mut activity = DMatrix::zeros(q, k);
    for _ in 0..n_samples {
        gibbs_sweep(&mut state, data, hyper, rng)?;
        w.push(&state.w);
        c.push(&state.c);
        mu.push(&DMatrix::from_column_slice(q, 1, state.mu.as_slice()));
        activity += &state.activity;
    }
    let (w_mean, w_var) = w.finish(n_samples);
    let (c_mean, c_var) = c.finish(n_samples);
    let (mu_mean, mu_var) = mu.finish(n_samples);
    Ok(PosteriorSummary {
        w_mean,
        w_var,
        c_mean,
        c_var,
        mu_mean: mu_mean.column(0).into_owned(),
        mu_var: mu_var.column(0).into_owned(),
        activity: (activity / n_samples as f64).map(|a: f64| a.clamp(0.0, 1.0)),
        samples: n_samples,
        burn_in,
    })
}

/// Sparse point estimate: entries whose mean activity is below `threshold` are
/// zeroed, the rest take their posterior mean.
pub fn posterior_point_estimates(summary: &PosteriorSummary, activity_threshold: f64) -> Result<FactorModel> {
    if !(0.0..=1.0).contains(&activity_threshold) {
        return Err(invalid("threshold must lie in [0, 1]"));
    }
    let w = DMatrix::from_fn(summary.w_mean.nrows(), summary.w_mean.ncols(), |i, k| {
        if summary.activity[(i, k)] < activity_threshold {
            0.0
        } else {
            summary.w_mean[(i, k)]
        }
    });
    FactorModel::new(w, summary.c_mean.clone(), summary.mu_mean.clone(), LinkKind::Probit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, q: usize, n: usize, p_obs: f64) -> ResponseMatrix {
        let rows: Vec<Vec<Option<u8>>> = (0..q)
            .map(|_| (0..n).map(|_| rng.random_bool(p_obs).then(|| rng.random_range(0..2))).collect())
            .collect();
        ResponseMatrix::from_options(&rows).unwrap()
    }

    #[test]
    fn invariants_hold_over_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_data(&mut rng, 8, 6, 0.8);
        let hyper = SparfaBHyperparams::for_data(2, &data);
        let mut state = GibbsState::initialise(&data, 2, &hyper, &mut rng).unwrap();
        state.check_invariants(&data).unwrap();
        for _ in 0..100 {
            gibbs_sweep(&mut state, &data, &hyper, &mut rng).unwrap();
            state.check_invariants(&data).unwrap();
        }
    }

    #[test]
    fn warm_start_keeps_estimate_and_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = random_data(&mut rng, 8, 6, 0.8);
        let hyper = SparfaBHyperparams::for_data(2, &data);
        let w = DMatrix::from_fn(8, 2, |i, k| if (i + k) % 3 == 0 { 0.0 } else { 0.5 + 0.1 * i as f64 });
        let c = DMatrix::from_fn(2, 6, |k, j| (k as f64 - 0.5) * (j as f64 - 2.0));
        let init = FactorModel::new(w.clone(), c.clone(), DVector::from_element(8, 0.2), LinkKind::Probit).unwrap();
        let mut state = GibbsState::from_estimate(&data, &init, &hyper, &mut rng).unwrap();
        state.check_invariants(&data).unwrap();
        assert_eq!(state.w, w);
        assert_eq!(state.c, c);
        for _ in 0..20 {
            gibbs_sweep(&mut state, &data, &hyper, &mut rng).unwrap();
            state.check_invariants(&data).unwrap();
        }
        let wrong = FactorModel::new(DMatrix::zeros(7, 2), DMatrix::zeros(2, 6), DVector::zeros(7), LinkKind::Probit).unwrap();
        assert!(GibbsState::from_estimate(&data, &wrong, &hyper, &mut rng).is_err());
        assert!(run_sparfa_b_from(&data, &init, &hyper, 0, 5, &mut rng).is_err());
        let summary = run_sparfa_b_from(&data, &init, &hyper, 5, 5, &mut rng).unwrap();
        assert_eq!((summary.burn_in, summary.samples), (5, 5));
    }

    #[test]
    fn hyperparameter_validation() {
        let mut h = SparfaBHyperparams::defaults(2);
        assert!(h.validate().is_ok());
        h.h = 0.5;
        assert!(h.validate().is_err());
        let mut h = SparfaBHyperparams::defaults(2);
        h.v0[(0, 1)] = 3.0;
        h.v0[(1, 0)] = 3.0;
        assert!(h.validate().is_err());
        let mut h = SparfaBHyperparams::defaults(2);
        h.alpha = 0.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn mu0_default_tracks_correct_rate() {
        let data = ResponseMatrix::full(&[vec![1, 1, 1, 0], vec![1, 1, 1, 0]]).unwrap();
        let h = SparfaBHyperparams::for_data(1, &data);
        assert!((h.mu0 - norm_quantile(0.75)).abs() < 1e-12);
    }

    #[test]
    fn difficulty_step_matches_conjugate_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = random_data(&mut rng, 3, 10, 0.7);
        let mut hyper = SparfaBHyperparams::defaults(1);
        hyper.mu0 = 0.4;
        hyper.v_mu = 2.0;
        let mut state = GibbsState::initialise(&data, 1, &hyper, &mut rng).unwrap();
        let mut plan = SweepPlan::none();
        plan.difficulty = true;
        let sweeps = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..sweeps {
            gibbs_sweep_with(&mut state, &data, &hyper, plan, &mut rng).unwrap();
            for i in 0..3 {
                sums[i] += state.mu[i];
            }
        }
        for i in 0..3 {
            let obs = data.row(i);
            let prec = 1.0 / hyper.v_mu + obs.len() as f64;
            let resid: f64 = obs.iter().map(|&(j, _)| state.z[(i, j)] - state.w[(i, 0)] * state.c[(0, j)]).sum();
            let post_mean = (hyper.mu0 / hyper.v_mu + resid) / prec;
            let se = (1.0 / prec / sweeps as f64).sqrt();
            let got = sums[i] / sweeps as f64;
            assert!((got - post_mean).abs() < 3.0 * se, "q{i}: {got} vs {post_mean} (se {se})");
        }
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let dof = 8.0;
        let n = 200_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(&scale, dof, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expect = &scale / (dof - 2.0 - 1.0);
        assert!((mean - expect).amax() < 0.01);
    }

    #[test]
    fn point_estimates_threshold() {
        let summary = PosteriorSummary {
            w_mean: DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 2.0, 0.1]),
            w_var: DMatrix::zeros(2, 2),
            c_mean: DMatrix::from_element(2, 3, 0.3),
            c_var: DMatrix::zeros(2, 3),
            mu_mean: DVector::from_vec(vec![-0.2, 0.4]),
            mu_var: DVector::zeros(2),
            activity: DMatrix::from_row_slice(2, 2, &[0.2, 0.9, 0.5, 0.34]),
            samples: 10,
            burn_in: 10,
        };
        let m = posterior_point_estimates(&summary, 0.35).unwrap();
        assert_eq!(m.w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]));
        let m = posterior_point_estimates(&summary, 0.55).unwrap();
        assert_eq!(m.w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let m = posterior_point_estimates(&summary, 0.0).unwrap();
        assert_eq!(m.w, summary.w_mean);
        assert_eq!(m.mu, summary.mu_mean);
        assert!(posterior_point_estimates(&summary, 1.5).is_err());
    }

    #[test]
    fn summary_bounds_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_data(&mut rng, 6, 8, 0.9);
        let hyper = SparfaBHyperparams::for_data(2, &data);
        let s = run_sparfa_b(&data, 2, &hyper, 20, 30, &mut rng).unwrap();
        assert_eq!(s.samples, 30);
        assert_eq!(s.burn_in, 20);
        assert!(s.activity.iter().all(|a| (0.0..=1.0).contains(a)));
        assert!(s.w_mean.iter().all(|&x| x >= 0.0));
        assert!(run_sparfa_b(&data, 2, &hyper, 0, 30, &mut rng).is_err());
    }

    #[test]
    fn chains_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_data(&mut rng, 5, 5, 1.0);
        let hyper = SparfaBHyperparams::defaults(2);
        let a = run_sparfa_b(&data, 2, &hyper, 10, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run_sparfa_b(&data, 2, &hyper, 10, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
        let t = d * (n as f64).sqrt();
        let mut p = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            p += 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * t * t).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn one_dimensional_inverse_wishart_is_inverse_gamma() {
        // IW(ψ, ν) on 1×1 matrices is InvGamma(ν/2, ψ/2)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (psi, nu) = (3.0, 7.0);
        let n = 10_000;
        let scale = DMatrix::from_element(1, 1, psi);
        let mut draws: Vec<f64> = (0..n)
            .map(|_| sample_inverse_wishart(&scale, nu, &mut rng).unwrap()[(0, 0)])
            .collect();
        draws.sort_by(f64::total_cmp);
        let cdf = |x: f64| statrs::function::gamma::gamma_ur(nu / 2.0, psi / 2.0 / x);
        let mut d: f64 = 0.0;
        for (idx, &x) in draws.iter().enumerate() {
            let f = cdf(x);
            d = d.max((f - idx as f64 / n as f64).abs()).max(((idx + 1) as f64 / n as f64 - f).abs());
        }
        assert!(kolmogorov_p_value(d, n) > 0.01, "D = {d}");
    }

    #[test]
    fn latent_draws_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = random_data(&mut rng, 4, 4, 1.0);
        let hyper = SparfaBHyperparams::defaults(2);
        let mut state = GibbsState::initialise(&data, 2, &hyper, &mut rng).unwrap();
        let mut plan = SweepPlan::none();
        plan.latent = true;
        let sweeps = 10_000;
        let cells: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).collect();
        let mut draws = vec![Vec::with_capacity(sweeps); cells.len()];
        for _ in 0..sweeps {
            gibbs_sweep_with(&mut state, &data, &hyper, plan, &mut rng).unwrap();
            for (d, &(i, j)) in draws.iter_mut().zip(&cells) {
                d.push(state.z[(i, j)]);
            }
        }
        let standardise = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            v.iter().map(|x| (x - m) / sd).collect::<Vec<_>>()
        };
        let z: Vec<Vec<f64>> = draws.iter().map(|d| standardise(d)).collect();
        let mut corrs = Vec::new();
        for a in 0..z.len() {
            for b in a + 1..z.len() {
                corrs.push(z[a].iter().zip(&z[b]).map(|(x, y)| x * y).sum::<f64>() / sweeps as f64);
            }
        }
        let mean_abs = corrs.iter().map(|r| r.abs()).sum::<f64>() / corrs.len() as f64;
        let worst = corrs.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(mean_abs < 0.02, "mean |corr| = {mean_abs}");
        // one standard error is 0.01; the maximum over 120 pairs stays within four
        assert!(worst < 0.04, "max |corr| = {worst}");
    }
}
