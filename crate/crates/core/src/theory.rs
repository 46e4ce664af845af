//! Closed-form per-unit embedding success probabilities.
//!
//! Model: candidate statistics are i.i.d. `Normal(μ, σ²)`, and a candidate
//! succeeds when it lands within relative tolerance `ε` of the target `τ`,
//! i.e. `(1 − ε)τ ≤ S ≤ (1 + ε)τ`. With `N` candidates the chance that at
//! least one succeeds is `1 − (1 − p)^N`. The worst case is the edge of the
//! target range, `τ = μ + 2σ`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::TheoryError;
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Relative tolerance `ε` in `(0, 1)`.
    pub eps_tol: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n_candidates: u32,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if !(self.eps_tol > 0.0 && self.eps_tol < 1.0) {
            return Err(TheoryError::InvalidInput("eps_tol must lie in (0, 1)"));
        }
        if !self.mu.is_finite() {
            return Err(TheoryError::InvalidInput("mu must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(TheoryError::InvalidInput("sigma must be positive"));
        }
        if self.n_candidates == 0 {
            return Err(TheoryError::InvalidInput("n_candidates must be positive"));
        }
        Ok(())
    }

    pub fn p_min(&self) -> f64 {
        p_min(self.eps_tol, self.mu, self.sigma)
    }

    pub fn success_probability(&self) -> f64 {
        success_probability(self.n_candidates, self.p_min())
    }
}

/// Single-candidate success at an arbitrary target `τ`.
pub fn p_success_at(eps_tol: f64, mu: f64, sigma: f64, tau: f64) -> f64 {
    let hi = ((1.0 + eps_tol) * tau - mu) / sigma;
    let lo = ((1.0 - eps_tol) * tau - mu) / sigma;
    (normal_cdf(hi) - normal_cdf(lo)).max(0.0)
}

/// Worst-case single-candidate success,
/// `Φ(2(1+ε) + εμ/σ) − Φ(2(1−ε) − εμ/σ)`.
pub fn p_min(eps_tol: f64, mu: f64, sigma: f64) -> f64 {
    let ratio = mu / sigma;
    let hi = 2.0 * (1.0 + eps_tol) + eps_tol * ratio;
    let lo = 2.0 * (1.0 - eps_tol) - eps_tol * ratio;
    (normal_cdf(hi) - normal_cdf(lo)).max(0.0)
}

/// `1 − (1 − p)^N`.
pub fn success_probability(n_candidates: u32, p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if p == 1.0 {
        return 1.0;
    }
    -libm::expm1(f64::from(n_candidates) * libm::log1p(-p))
}

/// Smallest `N` with `1 − (1 − p)^N ≥ target`.
pub fn required_candidates(target: f64, p: f64) -> Result<u32, TheoryError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(TheoryError::InvalidInput("target must lie in (0, 1)"));
    }
    if !(p > 0.0) || p.is_nan() {
        return Err(TheoryError::TargetUnreachable(p));
    }
    if p >= 1.0 {
        return Ok(1);
    }
    let estimate = libm::ceil(libm::log1p(-target) / libm::log1p(-p));
    if !(estimate < f64::from(u32::MAX)) {
        return Err(TheoryError::TargetUnreachable(p));
    }
    let mut n = (estimate as u32).max(1);
    // Guard against rounding at the boundary in either direction.
    while n > 1 && success_probability(n - 1, p) >= target {
        n -= 1;
    }
    while success_probability(n, p) < target {
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n_candidates: u32,
    pub p_min: f64,
    pub success: f64,
}

/// Worst-case success for each candidate count.
pub fn bound_table(eps_tol: f64, mu: f64, sigma: f64, counts: &[u32]) -> Vec<BoundRow> {
    let p = p_min(eps_tol, mu, sigma);
    counts
        .iter()
        .map(|&n| BoundRow {
            n_candidates: n,
            p_min: p,
            success: success_probability(n, p),
        })
        .collect()
}

pub const DEFAULT_BOUND_COUNTS: [u32; 4] = [5, 10, 20, 50];
