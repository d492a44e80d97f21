//! Single-worker optimizer kernels: SGDM, Adam (optionally AMSGrad) and ADOPT.
//!
//! The Adam and ADOPT steps carry no `1 - beta^t` bias-correction factors; the
//! parameter step is `eta / sqrt(v + lambda^2) * u` exactly.

pub mod theory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{clip_by_norm, clip_coordinatewise, ParamVector};

pub use theory::{drift_bound_first, drift_bound_second, eta0, half_life, k_lcm, psi, TheoryParams};

pub const DEFAULT_LAMBDA: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgdm,
    Adam,
    Adopt,
}

impl OptimizerKind {
    /// Number of optimizer states, in update order of the state slots.
    pub fn state_count(self) -> usize {
        match self {
            OptimizerKind::Sgdm => 1,
            OptimizerKind::Adam | OptimizerKind::Adopt => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Clipping {
    None,
    Coordinatewise { rho: f64 },
    ByNorm { rho: f64 },
}

impl Clipping {
    pub fn radius(&self) -> Option<f64> {
        match *self {
            Clipping::None => None,
            Clipping::Coordinatewise { rho } | Clipping::ByNorm { rho } => Some(rho),
        }
    }

    pub fn apply(&self, g: &ParamVector) -> Result<ParamVector> {
        match *self {
            Clipping::None => Ok(g.clone()),
            Clipping::Coordinatewise { rho } => clip_coordinatewise(g, rho),
            Clipping::ByNorm { rho } => clip_by_norm(g, rho),
        }
    }
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_clip() -> Clipping {
    Clipping::Coordinatewise { rho: 1.0 }
}

/// Optimizer hyper-parameters. For SGDM, `beta1` is the momentum decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub amsgrad: bool,
    #[serde(default = "default_clip")]
    pub clip: Clipping,
}

impl OptimizerSpec {
    pub fn adam(beta1: f64, beta2: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adam,
            beta1,
            beta2,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            amsgrad: false,
            clip: default_clip(),
        }
    }

    pub fn adopt(beta1: f64, beta2: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adopt,
            ..Self::adam(beta1, beta2)
        }
    }

    pub fn sgdm(beta: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Sgdm,
            beta2: 0.0,
            clip: Clipping::None,
            ..Self::adam(beta, 0.0)
        }
    }

    pub fn with_clip(mut self, clip: Clipping) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_amsgrad(mut self, amsgrad: bool) -> Self {
        self.amsgrad = amsgrad;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let decay = |name: &str, b: f64| {
            if (0.0..1.0).contains(&b) {
                Ok(())
            } else {
                Err(Error::config(
                    format!("optimizer.{name}"),
                    format!("decay rate must lie in [0, 1), got {b}"),
                ))
            }
        };
        decay("beta1", self.beta1)?;
        decay("beta2", self.beta2)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("optimizer.lambda", "must be non-negative"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config("optimizer.epsilon", "must be positive"));
        }
        if let Some(rho) = self.clip.radius() {
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(Error::config("optimizer.clip.rho", "must be positive"));
            }
        }
        if self.amsgrad && self.kind != OptimizerKind::Adam {
            return Err(Error::config(
                "optimizer.amsgrad",
                "AMSGrad normalization is only defined for adam",
            ));
        }
        Ok(())
    }
}

/// Per-worker optimizer state.
///
/// `u` is the first momentum (ADOPT's `m`); `v` the second momentum (absent
/// for SGDM); `v_tilde` the AMSGrad running maximum (present iff amsgrad).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub u: ParamVector,
    pub v: Option<ParamVector>,
    pub v_tilde: Option<ParamVector>,
}

impl OptimizerState {
    pub fn new(spec: &OptimizerSpec, dim: usize) -> Self {
        let has_v = spec.kind != OptimizerKind::Sgdm;
        OptimizerState {
            u: ParamVector::zeros(dim),
            v: has_v.then(|| ParamVector::zeros(dim)),
            v_tilde: (has_v && spec.amsgrad).then(|| ParamVector::zeros(dim)),
        }
    }

    /// State slot `j` (0 = first momentum, 1 = second momentum).
    pub fn slot(&self, j: usize) -> Option<&ParamVector> {
        match j {
            0 => Some(&self.u),
            1 => self.v.as_ref(),
            _ => None,
        }
    }

    pub fn slot_mut(&mut self, j: usize) -> Option<&mut ParamVector> {
        match j {
            0 => Some(&mut self.u),
            1 => self.v.as_mut(),
            _ => None,
        }
    }

    pub fn slot_count(&self) -> usize {
        1 + usize::from(self.v.is_some())
    }

    /// Name of the first non-finite vector, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        if !self.u.is_finite() {
            return Some("u");
        }
        if self.v.as_ref().is_some_and(|v| !v.is_finite()) {
            return Some("v");
        }
        if self.v_tilde.as_ref().is_some_and(|v| !v.is_finite()) {
            return Some("v_tilde");
        }
        None
    }

    fn second(&self) -> Result<&ParamVector> {
        self.v
            .as_ref()
            .ok_or_else(|| Error::invalid("optimizer state has no second momentum"))
    }
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// First momentum EMA: `beta * u + (1 - beta) * g`.
pub fn ema(prev: &ParamVector, g: &ParamVector, beta: f64) -> Result<ParamVector> {
    prev.zip_map(g, |p, x| beta * p + (1.0 - beta) * x)
}

/// Second momentum EMA: `beta * v + (1 - beta) * g * g`.
pub fn ema_sq(prev: &ParamVector, g: &ParamVector, beta: f64) -> Result<ParamVector> {
    prev.zip_map(g, |p, x| beta * p + (1.0 - beta) * (x * x))
}

/// Adam moment updates. When AMSGrad is on, the running maximum follows `v`.
pub fn adam_update_states(
    state: &OptimizerState,
    g_hat: &ParamVector,
    spec: &OptimizerSpec,
) -> Result<OptimizerState> {
    check_dims(&state.u, g_hat)?;
    let u = ema(&state.u, g_hat, spec.beta1)?;
    let v = ema_sq(state.second()?, g_hat, spec.beta2)?;
    let v_tilde = match (&state.v_tilde, spec.amsgrad) {
        (Some(prev), true) => Some(v.max(prev)?),
        (None, true) => Some(v.clone()),
        _ => None,
    };
    Ok(OptimizerState {
        u,
        v: Some(v),
        v_tilde,
    })
}

/// `x - eta / sqrt(v_eff + lambda^2) * u`, with `v_eff` the AMSGrad maximum when enabled.
pub fn adam_param_step(
    x: &ParamVector,
    state: &OptimizerState,
    eta: f64,
    spec: &OptimizerSpec,
) -> Result<ParamVector> {
    check_dims(x, &state.u)?;
    let v_eff = match (&state.v_tilde, spec.amsgrad) {
        (Some(vt), true) => vt,
        _ => state.second()?,
    };
    check_dims(x, v_eff)?;
    let lambda_sq = spec.lambda * spec.lambda;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let denom = (v_eff[i] + lambda_sq).sqrt();
        if denom == 0.0 {
            return Err(Error::domain(format!(
                "zero Adam denominator at coordinate {i} (lambda = 0 and v = 0)"
            )));
        }
        out.push(x[i] - eta / denom * state.u[i]);
    }
    Ok(ParamVector::new(out))
}

/// One ADOPT step. The first momentum is normalized by the previous second
/// momentum `max(sqrt(v_prev), epsilon)`; `v` itself is updated afterwards.
pub fn adopt_update(
    x: &ParamVector,
    state: &OptimizerState,
    g_hat: &ParamVector,
    eta: f64,
    spec: &OptimizerSpec,
) -> Result<(ParamVector, OptimizerState)> {
    adopt_update_with_normalizer(x, state, g_hat, eta, spec, state.second()?)
}

/// ADOPT step with an explicit normalizer vector standing in for `v_{t-1}`.
///
/// The simulator passes the worker's own pre-synchronization second moment
/// here, while `state` already holds the cross-worker average.
pub fn adopt_update_with_normalizer(
    x: &ParamVector,
    state: &OptimizerState,
    g_hat: &ParamVector,
    eta: f64,
    spec: &OptimizerSpec,
    v_prev: &ParamVector,
) -> Result<(ParamVector, OptimizerState)> {
    check_dims(x, g_hat)?;
    check_dims(x, &state.u)?;
    check_dims(x, v_prev)?;
    let v = ema_sq(state.second()?, g_hat, spec.beta2)?;
    let eps = spec.epsilon;
    let normalized = g_hat.zip_map(v_prev, |g, vp| g / vp.sqrt().max(eps))?;
    let u = ema(&state.u, &normalized, spec.beta1)?;
    let x_next = x.zip_map(&u, |xi, ui| xi - eta * ui)?;
    Ok((
        x_next,
        OptimizerState {
            u,
            v: Some(v),
            v_tilde: None,
        },
    ))
}

/// SGD with momentum: `u' = beta u + (1 - beta) g`, `x' = x - eta u'`.
pub fn sgdm_update(
    x: &ParamVector,
    state: &OptimizerState,
    g: &ParamVector,
    eta: f64,
    beta: f64,
) -> Result<(ParamVector, OptimizerState)> {
    check_dims(x, g)?;
    check_dims(x, &state.u)?;
    let u = ema(&state.u, g, beta)?;
    let x_next = x.zip_map(&u, |xi, ui| xi - eta * ui)?;
    Ok((
        x_next,
        OptimizerState {
            u,
            v: None,
            v_tilde: None,
        },
    ))
}

/// Runs one full optimizer step for `spec.kind`.
///
/// `adopt_normalizer` overrides the ADOPT normalizer; it is ignored by the
/// other kinds.
pub fn step(
    x: &ParamVector,
    state: &OptimizerState,
    g_hat: &ParamVector,
    eta: f64,
    spec: &OptimizerSpec,
    adopt_normalizer: Option<&ParamVector>,
) -> Result<(ParamVector, OptimizerState)> {
    match spec.kind {
        OptimizerKind::Sgdm => sgdm_update(x, state, g_hat, eta, spec.beta1),
        OptimizerKind::Adam => {
            let next = adam_update_states(state, g_hat, spec)?;
            let x_next = adam_param_step(x, &next, eta, spec)?;
            Ok((x_next, next))
        }
        OptimizerKind::Adopt => match adopt_normalizer {
            Some(v_prev) => adopt_update_with_normalizer(x, state, g_hat, eta, spec, v_prev),
            None => adopt_update(x, state, g_hat, eta, spec),
        },
    }
}
