//! Bayesian sparse factor analysis by Gibbs sampling (probit link only).
//!
//! Prior: `W_{i,k} ~ r_k Exp(λ_k) + (1 − r_k) δ₀`, `λ_k ~ Ga(α, β)`,
//! `r_k ~ Beta(e, f)`, `c_j ~ N(0, V)`, `V ~ IW(V₀, h)`, `μ_i ~ N(μ₀, v_μ)`.

mod gibbs;
mod posterior;
mod truncnorm;

pub use gibbs::{
    gibbs_sweep, gibbs_sweep_with, posterior_point_estimates, run_sparfa_b, run_sparfa_b_from, sample_inverse_wishart, GibbsState,
    PosteriorSummary, SparfaBHyperparams, SweepPlan,
};
pub use posterior::{spike_slab_posterior, w_posterior_stats, WPosterior};
pub use truncnorm::{rect_normal_density, sample_rect_normal, sample_truncnorm, Side};
