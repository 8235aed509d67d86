//! Inverse link functions and the log-space quantities derived from them.
//!
//! Everything in here is evaluated so that tails never collapse to `log(0)`
//! or `0/0`: the probit log-CDF switches to an asymptotic series below
//! `x = -8`, and hazard ratios are formed as differences of logs.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{invalid, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LOG_CDF_SERIES_CUTOFF: f64 = -37.0;

/// Clamp used only inside ratio computations.
pub const PROB_CLAMP: f64 = 1e-16;

/// Which inverse link maps the slack `Z` to a success probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    #[default]
    Probit,
    Logit,
}

impl LinkKind {
    /// Scalar Lipschitz constant of the hazard derivative for this link.
    pub fn scalar_lipschitz(self) -> f64 {
        match self {
            LinkKind::Probit => 1.0,
            LinkKind::Logit => 0.25,
        }
    }

    /// `Φ(z)` without argument checking.
    #[inline]
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            LinkKind::Probit => norm_cdf(z),
            LinkKind::Logit => sigmoid(z),
        }
    }

    /// `log Φ(z)`.
    #[inline]
    pub fn log_cdf(self, z: f64) -> f64 {
        match self {
            LinkKind::Probit => log_norm_cdf(z),
            LinkKind::Logit => -softplus(-z),
        }
    }

    /// `log p(y | z)`.
    #[inline]
    pub fn log_lik(self, y: bool, z: f64) -> f64 {
        if y {
            self.log_cdf(z)
        } else {
            // both links are symmetric: 1 - Φ(z) = Φ(-z)
            self.log_cdf(-z)
        }
    }

    /// Hazard `Φ'(x)/Φ(x)`.
    #[inline]
    pub fn hazard(self, x: f64) -> f64 {
        match self {
            LinkKind::Probit => probit_hazard(x),
            LinkKind::Logit => logit_hazard(x),
        }
    }

    /// Derivative of `-log p(y | z)` with respect to `z`.
    ///
    /// Equal to `-D (y - Φ(z))` for the probit link with
    /// `D = N(z) / (Φ(z)(1 - Φ(z)))`, and to `-(y - Φ(z))` for the logit link.
    #[inline]
    pub fn neg_log_lik_deriv(self, y: bool, z: f64) -> f64 {
        match self {
            LinkKind::Probit => {
                if y {
                    -probit_hazard(z)
                } else {
                    probit_hazard(-z)
                }
            }
            LinkKind::Logit => sigmoid(z) - if y { 1.0 } else { 0.0 },
        }
    }
}

impl std::fmt::Display for LinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkKind::Probit => f.write_str("probit"),
            LinkKind::Logit => f.write_str("logit"),
        }
    }
}

impl std::str::FromStr for LinkKind {
    type Err = crate::error::SparfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probit" => Ok(LinkKind::Probit),
            "logit" => Ok(LinkKind::Logit),
            other => Err(invalid(format!("unknown link '{other}'"))),
        }
    }
}

fn check_finite_input(x: f64) -> Result<()> {
    if x.is_nan() {
        Err(invalid("NaN argument to link function"))
    } else {
        Ok(())
    }
}

/// Inverse probit (standard normal CDF).
pub fn inv_probit(x: f64) -> Result<f64> {
    check_finite_input(x)?;
    Ok(norm_cdf(x))
}

/// Inverse logit.
pub fn inv_logit(x: f64) -> Result<f64> {
    check_finite_input(x)?;
    Ok(sigmoid(x))
}

/// `log p(y | z)` for a single entry.
pub fn log_lik_entry(y: bool, z: f64, link: LinkKind) -> f64 {
    link.log_lik(y, z)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `log Φ(x)` accurate across the whole real line.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < LOG_CDF_SERIES_CUTOFF {
        // Φ(x) = φ(x)/(-x) · (1 - 1/x² + 3/x⁴ - 15/x⁶ + 105/x⁸ - ...)
        let inv2 = 1.0 / (x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=6 {
            term *= -((2 * n - 1) as f64) * inv2;
            sum += term;
        }
        log_norm_pdf(x) - (-x).ln() + sum.ln()
    } else if x > 5.0 {
        (-norm_cdf(-x)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

/// Probit hazard `N(x)/Φ(x)`; log-space below the direct-ratio range.
pub fn probit_hazard(x: f64) -> f64 {
    if x >= -30.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        (log_norm_pdf(x) - log_norm_cdf(x)).exp()
    }
}

/// Logit hazard `1/(1+e^x)`.
#[inline]
pub fn logit_hazard(x: f64) -> f64 {
    sigmoid(-x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `√(2/π)`, the probit hazard at zero.
pub fn probit_hazard_at_zero() -> f64 {
    (2.0 / PI).sqrt()
}
