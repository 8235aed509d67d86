use nalgebra::DMatrix;

use crate::error::{invalid, Result, SparfaError};
use crate::link::log_norm_cdf;

/// Conditional posterior of one `W_{i,k}` under the spike-slab prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WPosterior {
    /// `p(W_{i,k} = 0 | Z, C, μ)`.
    pub spike_prob: f64,
    /// Location `M̂` of the slab component.
    pub mean: f64,
    /// Scale `Ŝ` of the slab component.
    pub var: f64,
}

impl WPosterior {
    /// `1 − p(W = 0 | ·)`, the weight on the slab.
    pub fn activity(&self) -> f64 {
        1.0 - self.spike_prob
    }
}

/// Spike probability for a Gaussian pseudo-observation `x ~ N(w, s)` of an
/// entry with prior `r Exp(λ) + (1 − r) δ₀`.
///
/// The slab posterior is `N(m − λs, s)` truncated to `[0, ∞)`; its density at 0,
/// divided by `Exp(0|λ) = λ`, is the Bayes factor of the spike against the slab.
pub fn spike_slab_posterior(m_hat: f64, s_hat: f64, lambda: f64, r: f64) -> Result<WPosterior> {
    if !(s_hat > 0.0) || !(lambda > 0.0) {
        return Err(invalid("spike-slab posterior needs s > 0 and lambda > 0"));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(invalid("inclusion probability must lie in [0, 1]"));
    }
    let shifted = m_hat - lambda * s_hat;
    let log_slab_at_zero = -shifted * shifted / (2.0 * s_hat)
        - 0.5 * (2.0 * std::f64::consts::PI * s_hat).ln()
        - log_norm_cdf(shifted / s_hat.sqrt());
    let spike_prob = if r >= 1.0 {
        0.0
    } else if r <= 0.0 {
        1.0
    } else {
        let log_odds = log_slab_at_zero - lambda.ln() + (1.0 - r).ln() - r.ln();
        crate::link::sigmoid(log_odds)
    };
    Ok(WPosterior {
        spike_prob,
        mean: m_hat,
        var: s_hat,
    })
}

/// Posterior statistics for `W_{i,k}` from the current state of row `i`.
///
/// `z_row` is the latent slack row, `w_row` the current associations of
/// question `i`, and `obs` its observed learners.
#[allow(clippy::too_many_arguments)]
pub fn w_posterior_stats(
    z_row: &[f64],
    c: &DMatrix<f64>,
    mu_i: f64,
    k: usize,
    w_row: &[f64],
    lambda_k: f64,
    r_k: f64,
    obs: &[(usize, bool)],
) -> Result<WPosterior> {
    let mut sum_cc = 0.0;
    let mut sum_rc = 0.0;
    for &(j, _) in obs {
        let ckj = c[(k, j)];
        let mut partial = z_row[j] - mu_i;
        for (kk, &w) in w_row.iter().enumerate() {
            if kk != k {
                partial -= w * c[(kk, j)];
            }
        }
        sum_cc += ckj * ckj;
        sum_rc += partial * ckj;
    }
    if sum_cc == 0.0 {
        return Err(SparfaError::DegenerateColumn(k));
    }
    spike_slab_posterior(sum_rc / sum_cc, 1.0 / sum_cc, lambda_k, r_k)
}
