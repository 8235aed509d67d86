use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{invalid, Result};
use crate::link::{log_norm_cdf, norm_cdf, norm_quantile};

/// Which half-line a truncated normal draw lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Positive,
    Negative,
}

/// Tail point beyond which the exponential-proposal sampler takes over.
const ROBERT_CUTOFF: f64 = 4.0;

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (0, 1]
    1.0 - rng.random::<f64>()
}

/// Exponential-proposal rejection sampler for `X ~ N(0,1) | X > a`, `a > 0`.
fn robert_tail<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / alpha;
        let u = open_unit(rng);
        if u.ln() <= -0.5 * (z - alpha) * (z - alpha) {
            return z;
        }
    }
}

/// `X ~ N(0,1) | X > a`.
fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a > ROBERT_CUTOFF {
        return robert_tail(a, rng);
    }
    loop {
        let x = if a <= 0.0 {
            let lo = norm_cdf(a);
            norm_quantile(lo + rng.random::<f64>() * (1.0 - lo))
        } else {
            -norm_quantile(open_unit(rng) * norm_cdf(-a))
        };
        if x > a && x.is_finite() {
            return x;
        }
    }
}

/// Draws from `N(mean, var)` restricted to one open half-line at zero.
pub fn sample_truncnorm<R: Rng + ?Sized>(mean: f64, var: f64, side: Side, rng: &mut R) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
        return Err(invalid(format!("truncated normal needs var > 0 (got {var}) and finite mean")));
    }
    let sd = var.sqrt();
    let signed_mean = match side {
        Side::Positive => mean,
        Side::Negative => -mean,
    };
    let a = -signed_mean / sd;
    let mut x = signed_mean + sd * std_normal_above(a, rng);
    if x <= 0.0 {
        // standardised draw only cleared the bound by rounding error
        x = f64::MIN_POSITIVE.max(sd * 1e-300);
    }
    Ok(match side {
        Side::Positive => x,
        Side::Negative => -x,
    })
}

/// Draws from the rectified normal `∝ exp(−(x−m)²/2s − λx)` on `x ≥ 0`, which is
/// `N(m − λs, s)` truncated to the positive half-line.
pub fn sample_rect_normal<R: Rng + ?Sized>(m: f64, s: f64, lambda: f64, rng: &mut R) -> Result<f64> {
    if !(s > 0.0) {
        return Err(invalid(format!("rectified normal needs s > 0 (got {s})")));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("rectified normal needs lambda >= 0"));
    }
    sample_truncnorm(m - lambda * s, s, Side::Positive, rng)
}

/// Log-density of the rectified normal at `x ≥ 0`.
pub fn rect_normal_log_density(x: f64, m: f64, s: f64, lambda: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let shifted = m - lambda * s;
    let sd = s.sqrt();
    -(x - shifted).powi(2) / (2.0 * s) - 0.5 * (2.0 * std::f64::consts::PI * s).ln() - log_norm_cdf(shifted / sd)
}

pub fn rect_normal_density(x: f64, m: f64, s: f64, lambda: f64) -> f64 {
    rect_normal_log_density(x, m, s, lambda).exp()
}
