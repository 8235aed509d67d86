use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::cholesky_jittered;
use crate::link::LinkKind;
use crate::model::{Dimensions, FactorModel, ResponseMatrix};
use crate::sparfa_b::sample_inverse_wishart;

/// How many entries of each row of W are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnzMode {
    /// Row count drawn from the discrete uniform law on `lo..=hi` (capped at K).
    DiscreteUniform { lo: usize, hi: usize },
    /// Every entry active independently with probability `q`.
    Bernoulli { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub q: usize,
    pub n: usize,
    pub k: usize,
    pub nnz_mode: NnzMode,
    /// Rate of the exponential law of active W entries.
    pub lambda_k: f64,
    pub v_mu: f64,
    pub v0: DMatrix<f64>,
    /// Inverse-Wishart degrees of freedom for the covariance of C.
    pub h: f64,
    pub p_obs: f64,
    pub link: LinkKind,
    pub seed: u64,
}

impl SynthConfig {
    /// `DU(1,3)` rows, `λ_k = 2/3`, `v_μ = 1`, `V0 = I`, `h = K + 2`, full mask.
    pub fn standard(q: usize, n: usize, k: usize, seed: u64) -> Self {
        SynthConfig {
            q,
            n,
            k,
            nnz_mode: NnzMode::DiscreteUniform { lo: 1, hi: 3 },
            lambda_k: 2.0 / 3.0,
            v_mu: 1.0,
            v0: DMatrix::identity(k, k),
            h: k as f64 + 2.0,
            p_obs: 1.0,
            link: LinkKind::Probit,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Dimensions::new(self.q, self.n, self.k)?;
        if !(self.p_obs > 0.0 && self.p_obs <= 1.0) {
            return Err(invalid("p_obs must lie in (0, 1]"));
        }
        if !(self.lambda_k > 0.0) {
            return Err(invalid("lambda_k must be > 0"));
        }
        if !(self.v_mu > 0.0) {
            return Err(invalid("v_mu must be > 0"));
        }
        match self.nnz_mode {
            NnzMode::DiscreteUniform { lo, hi } if lo > hi => {
                return Err(invalid("discrete-uniform bounds must satisfy lo <= hi"))
            }
            NnzMode::Bernoulli { q } if !(q > 0.0 && q < 1.0) => return Err(invalid("Bernoulli rate must lie in (0, 1)")),
            _ => {}
        }
        if self.v0.shape() != (self.k, self.k) {
            return Err(invalid("V0 must be K x K"));
        }
        if !(self.h > self.k as f64 - 1.0) {
            return Err(invalid("h must exceed K - 1"));
        }
        Ok(())
    }
}

/// Draws W, C, μ from the generative priors, then `Y ~ Ber(Φ(WC + μ))` and an
/// i.i.d. observation mask. Unobserved positions keep their drawn responses.
pub fn generate_synthetic<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<(FactorModel, ResponseMatrix)> {
    config.validate()?;
    let (q, n, k) = (config.q, config.n, config.k);
    let exp = Exp::new(config.lambda_k).map_err(|e| invalid(e.to_string()))?;

    let mut w = DMatrix::zeros(q, k);
    for i in 0..q {
        match config.nnz_mode {
            NnzMode::DiscreteUniform { lo, hi } => {
                let count = rng.random_range(lo..=hi).min(k);
                for kk in sample(rng, k, count).into_vec() {
                    w[(i, kk)] = exp.sample(rng);
                }
            }
            NnzMode::Bernoulli { q: rate } => {
                for kk in 0..k {
                    if rng.random_bool(rate) {
                        w[(i, kk)] = exp.sample(rng);
                    }
                }
            }
        }
    }

    let v = sample_inverse_wishart(&config.v0, config.h, rng)?;
    let l = cholesky_jittered(&v)?.l();
    let z = DMatrix::from_fn(k, n, |_, _| rng.sample(StandardNormal));
    let c = l * z;
    let sd_mu = config.v_mu.sqrt();
    let mu = DVector::from_fn(q, |_, _| sd_mu * rng.sample::<f64, _>(StandardNormal));
    let truth = FactorModel::new(w, c, mu, config.link)?;

    let data = sample_responses(&truth, config.link, config.p_obs, rng)?;
    Ok((truth, data))
}

/// Draws `Y ~ Ber(link(Z))` for the given factors and an i.i.d. mask at rate `p_obs`.
pub fn sample_responses<R: Rng + ?Sized>(
    truth: &FactorModel,
    link: LinkKind,
    p_obs: f64,
    rng: &mut R,
) -> Result<ResponseMatrix> {
    if !(p_obs > 0.0 && p_obs <= 1.0) {
        return Err(invalid("p_obs must lie in (0, 1]"));
    }
    let (q, n) = (truth.questions(), truth.learners());
    let mut values = vec![0u8; q * n];
    for j in 0..n {
        for i in 0..q {
            let p = link.cdf(truth.slack_entry(i, j));
            values[i + j * q] = u8::from(rng.random::<f64>() < p);
        }
    }
    let mask: Vec<bool> = (0..q * n).map(|_| p_obs >= 1.0 || rng.random::<f64>() < p_obs).collect();
    ResponseMatrix::new(q, n, values, mask)
}
