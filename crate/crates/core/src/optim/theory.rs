//! Closed-form helpers: EMA half-life, clipped-momentum drift bounds, the
//! SGDM step-size calculators and the full-synchronization period.
//!
//! These are advisory; the simulator never substitutes them for a configured
//! learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem constants used by [`eta0`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Smoothness constant.
    pub l: f64,
    /// Heterogeneity bound `B^2` (>= 1).
    pub b2: f64,
    /// Heterogeneity bound `G^2` (>= 0).
    pub g2: f64,
    pub sigma: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) {
            return Err(Error::domain("smoothness constant L must be positive"));
        }
        if !(self.b2 >= 1.0) {
            return Err(Error::domain("B^2 must be at least 1"));
        }
        if !(self.g2 >= 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::domain("G^2 and sigma must be non-negative"));
        }
        Ok(())
    }
}

fn check_decay(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(format!("decay rate must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

/// Steps until an EMA with decay `beta` weights old information by `psi_frac`:
/// `ln(psi_frac) / ln(beta)`.
pub fn half_life(beta: f64, psi_frac: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(psi_frac > 0.0 && psi_frac < 1.0) {
        return Err(Error::domain(format!(
            "decay fraction must lie in (0, 1), got {psi_frac}"
        )));
    }
    Ok(psi_frac.ln() / beta.ln())
}

fn check_drift_args(rho: f64, beta: f64) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::domain(format!("rho must be positive, got {rho}")));
    }
    check_decay(beta)
}

/// Largest l-inf change of a clipped first momentum over `k` local steps:
/// `2 rho (1 - beta1^k)`.
pub fn drift_bound_first(rho: f64, beta1: f64, k: u64) -> Result<f64> {
    check_drift_args(rho, beta1)?;
    Ok(2.0 * rho * (1.0 - powu(beta1, k)))
}

/// Largest l-inf change of a clipped second momentum over `k` local steps:
/// `2 rho^2 (1 - beta2^k)`.
pub fn drift_bound_second(rho: f64, beta2: f64, k: u64) -> Result<f64> {
    check_drift_args(rho, beta2)?;
    Ok(2.0 * rho * rho * (1.0 - powu(beta2, k)))
}

fn powu(base: f64, exp: u64) -> f64 {
    match i32::try_from(exp) {
        Ok(e) => base.powi(e),
        Err(_) => base.powf(exp as f64),
    }
}

/// Divergence term of probabilistic DES-LOC-SGDM:
/// `4 (1 - p_x) / p_x^2 * (1 - beta)(1 - p_u) / (1 - (1 - p_u) beta)`.
pub fn psi(p_x: f64, p_u: f64, beta: f64) -> Result<f64> {
    if !(p_x > 0.0 && p_x <= 1.0) {
        return Err(Error::domain(format!(
            "parameter sync probability must lie in (0, 1], got {p_x}; psi is unbounded"
        )));
    }
    if !(0.0..=1.0).contains(&p_u) {
        return Err(Error::domain(format!(
            "momentum sync probability must lie in [0, 1], got {p_u}"
        )));
    }
    check_decay(beta)?;
    let model = 4.0 * (1.0 - p_x) / (p_x * p_x);
    let momentum = (1.0 - beta) * (1.0 - p_u) / (1.0 - (1.0 - p_u) * beta);
    Ok(model * momentum)
}

/// Step-size ceiling `1/(4L) * min(1 - beta, 1 / (6 sqrt(psi * max(1, B^2 - 1))))`.
pub fn eta0(l: f64, beta: f64, b2: f64, psi_val: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::domain(format!("L must be positive, got {l}")));
    }
    check_decay(beta)?;
    if !(b2 >= 0.0) || !(psi_val >= 0.0) {
        return Err(Error::domain("B^2 and psi must be non-negative"));
    }
    let spread = (psi_val * (b2 - 1.0).max(1.0)).sqrt();
    let second = if spread == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (6.0 * spread)
    };
    Ok((1.0 - beta).min(second) / (4.0 * l))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Least common multiple of the sync periods: all quantities are averaged on
/// the same step exactly at multiples of this value.
pub fn k_lcm(periods: &[u64]) -> Result<u64> {
    if periods.is_empty() {
        return Err(Error::invalid("k_lcm needs at least one period"));
    }
    periods.iter().try_fold(1u64, |acc, &k| {
        if k == 0 {
            return Err(Error::invalid("sync periods must be positive"));
        }
        (acc / gcd(acc, k))
            .checked_mul(k)
            .ok_or_else(|| Error::invalid("least common multiple overflows u64"))
    })
}
