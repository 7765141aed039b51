//! Recovery error bound for compression-based speckle recovery.
//!
//! With `t = √(m/n)` and `α = x_max / x_min`:
//!
//! ```text
//! γ   = ((1 + 2t) / (1 − 2t))²
//! ρ₁  = 4√2 α⁸ γ⁵ (1 + 2α²γ)² (1 + 2t)²
//! ρ₂  = (1 + 2α²γ)² γ⁷ α¹⁴
//! mse ≤ ρ₁ √((1 + ε) n r / m) + ρ₂ x_max² δ
//! ```
//!
//! holding with probability at least
//! `1 − n e^{−0.09m} − n e^{−0.84m} − 2^{−nrε+1} − 2e^{−m/2}`, provided `m < n/4`.
//! Constants are assembled in log space because `α¹⁴γ⁷` leaves the `f64`
//! range for modest `α`.

use serde::{Deserialize, Serialize};

use crate::measurement::Bounds;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Code rate in bits per sample.
    pub rate: f64,
    /// Code distortion (per-sample squared error).
    pub delta: f64,
    pub epsilon: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || 4 * self.m >= self.n {
            return Err(Error::HypothesisViolation { m: self.m, n: self.n });
        }
        Bounds::new(self.x_min, self.x_max)?;
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("rate must be finite and >= 0, got {}", self.rate)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOutputs {
    pub gamma: f64,
    pub alpha: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub ln_rho1: f64,
    pub ln_rho2: f64,
    pub mse_bound: f64,
    /// Sum of the four failure terms.
    pub failure_sum: f64,
    /// `1 − failure_sum`; negative whenever the bound is vacuous.
    pub success_raw: f64,
    /// `success_raw` clamped to `[0, 1]`.
    pub success_clamped: f64,
    pub clamped: bool,
}

pub fn recovery_bound(inp: &BoundInputs) -> Result<BoundOutputs> {
    inp.validate()?;
    let (m, n) = (inp.m as f64, inp.n as f64);
    let t = (m / n).sqrt();
    // finite because t < 1/2
    let gamma = ((1.0 + 2.0 * t) / (1.0 - 2.0 * t)).powi(2);
    let ln_gamma = gamma.ln();
    let alpha = inp.x_max / inp.x_min;
    let ln_alpha = alpha.ln();
    // ln(1 + 2α²γ) without forming α²γ directly
    let ln_mix = (2f64.ln() + 2.0 * ln_alpha + ln_gamma).exp().ln_1p();
    let ln_mix = if ln_mix.is_finite() {
        ln_mix
    } else {
        2f64.ln() + 2.0 * ln_alpha + ln_gamma
    };
    let ln_rho1 = (4.0 * 2f64.sqrt()).ln()
        + 8.0 * ln_alpha
        + 5.0 * ln_gamma
        + 2.0 * ln_mix
        + 2.0 * (1.0 + 2.0 * t).ln();
    let ln_rho2 = 2.0 * ln_mix + 7.0 * ln_gamma + 14.0 * ln_alpha;
    let first = (ln_rho1 + 0.5 * ((1.0 + inp.epsilon) * n * inp.rate / m).ln()).exp();
    let second = if inp.delta == 0.0 {
        0.0
    } else {
        (ln_rho2 + 2.0 * inp.x_max.ln() + inp.delta.ln()).exp()
    };
    let failure_sum = n * (-0.09 * m).exp()
        + n * (-0.84 * m).exp()
        + (1.0 - n * inp.rate * inp.epsilon).exp2()
        + 2.0 * (-m / 2.0).exp();
    let success_raw = 1.0 - failure_sum;
    let success_clamped = success_raw.clamp(0.0, 1.0);
    Ok(BoundOutputs {
        gamma,
        alpha,
        rho1: ln_rho1.exp(),
        rho2: ln_rho2.exp(),
        ln_rho1,
        ln_rho2,
        mse_bound: first + second,
        failure_sum,
        success_raw,
        success_clamped,
        clamped: success_clamped != success_raw,
    })
}

/// Rate and distortion of a `k`-jump code at `δ = 1/n`:
/// `r = (2k/n) ln n`. Logarithms are natural.
pub fn corollary_inputs(k: usize, n: usize, m: usize, epsilon: f64, bounds: Bounds) -> BoundInputs {
    let nf = n as f64;
    BoundInputs {
        m,
        n,
        x_min: bounds.min,
        x_max: bounds.max,
        rate: 2.0 * k as f64 / nf * nf.ln(),
        delta: 1.0 / nf,
        epsilon,
    }
}

/// `ρ₁ √(2(1+ε) k ln n / m) + ρ₂ x_max² / n`.
pub fn corollary_bound(k: usize, n: usize, m: usize, epsilon: f64, bounds: Bounds) -> Result<f64> {
    Ok(recovery_bound(&corollary_inputs(k, n, m, epsilon, bounds))?.mse_bound)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub bound: BoundOutputs,
    /// Per-trial `mse / mse_bound`.
    pub slack_ratios: Vec<f64>,
    pub worst_ratio: f64,
    /// Indices of trials whose error exceeds the bound.
    pub violations: Vec<usize>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares per-trial per-sample squared errors against the bound.
pub fn empirical_bound_check(per_trial_mse: &[f64], inp: &BoundInputs) -> Result<BoundCheck> {
    let bound = recovery_bound(inp)?;
    let slack_ratios: Vec<f64> = per_trial_mse.iter().map(|e| e / bound.mse_bound).collect();
    let violations = per_trial_mse
        .iter()
        .enumerate()
        .filter(|(_, e)| !(**e <= bound.mse_bound))
        .map(|(i, _)| i)
        .collect();
    let worst_ratio = slack_ratios.iter().copied().fold(0.0, f64::max);
    Ok(BoundCheck {
        bound,
        slack_ratios,
        worst_ratio,
        violations,
    })
}
