//! Per-step synchronization decisions and their application to worker replicas.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::step_payload_units;
use crate::optim::k_lcm;
use crate::rng::{self, Domain, Stream};
use crate::sim::WorkerState;
use crate::vecmath::{mean_across_workers, ParamVector};

/// How one synchronized quantity is treated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Average whenever `t mod K == 0`.
    Periodic(u64),
    /// Average with probability `p` at each step, drawn collectively.
    Probabilistic(f64),
    Never,
    /// Reset to the initial value whenever the parameters are averaged.
    ResetWithParams,
}

impl SyncMode {
    fn validate(&self, path: &str) -> Result<()> {
        match *self {
            SyncMode::Periodic(0) => Err(Error::config(path, "sync period must be at least 1")),
            SyncMode::Probabilistic(p) if !(0.0..=1.0).contains(&p) => Err(Error::config(
                path,
                format!("sync probability must lie in [0, 1], got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

/// A synchronized quantity: the parameters or optimizer state slot `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantity {
    Params,
    State(usize),
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Params => write!(f, "x"),
            Quantity::State(0) => write!(f, "u"),
            Quantity::State(1) => write!(f, "v"),
            Quantity::State(j) => write!(f, "s{}", j + 1),
        }
    }
}

/// One policy bound to one quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyncPolicy {
    pub quantity: Quantity,
    pub mode: SyncMode,
}

/// The complete set of policies: one for the parameters and one per
/// optimizer state slot, in the optimizer's state order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncPolicies {
    pub params: SyncMode,
    pub states: Vec<SyncMode>,
}

impl SyncPolicies {
    pub fn new(params: SyncMode, states: Vec<SyncMode>) -> Self {
        SyncPolicies { params, states }
    }

    /// Every quantity averaged on every step.
    pub fn ddp(state_count: usize) -> Self {
        Self::local(1, state_count)
    }

    /// Local Adam style: everything averaged every `k` steps.
    pub fn local(k: u64, state_count: usize) -> Self {
        Self::new(SyncMode::Periodic(k), vec![SyncMode::Periodic(k); state_count])
    }

    pub fn des_loc(k_x: u64, state_periods: &[u64]) -> Self {
        Self::new(
            SyncMode::Periodic(k_x),
            state_periods.iter().map(|&k| SyncMode::Periodic(k)).collect(),
        )
    }

    /// Parameters averaged every `k` steps, optimizer states kept local.
    pub fn favg_keep_states(k: u64, state_count: usize) -> Self {
        Self::new(SyncMode::Periodic(k), vec![SyncMode::Never; state_count])
    }

    /// Parameters averaged every `k` steps, optimizer states reset at each average.
    pub fn favg_reset_states(k: u64, state_count: usize) -> Self {
        Self::new(
            SyncMode::Periodic(k),
            vec![SyncMode::ResetWithParams; state_count],
        )
    }

    pub fn validate(&self, state_count: usize) -> Result<()> {
        if self.states.len() != state_count {
            return Err(Error::config(
                "sync.states",
                format!(
                    "expected {state_count} state policies for this optimizer, got {}",
                    self.states.len()
                ),
            ));
        }
        if self.params == SyncMode::ResetWithParams {
            return Err(Error::config(
                "sync.params",
                "reset_with_params only applies to optimizer states",
            ));
        }
        if let SyncMode::Probabilistic(p) = self.params {
            if p == 0.0 {
                return Err(Error::config(
                    "sync.params",
                    "parameter sync probability 0 makes psi unbounded",
                ));
            }
        }
        self.params.validate("sync.params")?;
        for (j, mode) in self.states.iter().enumerate() {
            mode.validate(&format!("sync.states[{j}]"))?;
        }
        Ok(())
    }

    pub fn mode(&self, q: Quantity) -> SyncMode {
        match q {
            Quantity::Params => self.params,
            Quantity::State(j) => self.states[j],
        }
    }

    pub fn policies(&self) -> Vec<SyncPolicy> {
        std::iter::once(Quantity::Params)
            .chain((0..self.states.len()).map(Quantity::State))
            .map(|quantity| SyncPolicy {
                quantity,
                mode: self.mode(quantity),
            })
            .collect()
    }

    /// Typical number of steps between averaging events of `q`.
    pub fn nominal_period(&self, q: Quantity) -> Option<u64> {
        match self.mode(q) {
            SyncMode::Periodic(k) => Some(k),
            SyncMode::Probabilistic(p) if p > 0.0 => Some((1.0 / p).round().max(1.0) as u64),
            SyncMode::Probabilistic(_) | SyncMode::Never => None,
            SyncMode::ResetWithParams => self.nominal_period(Quantity::Params),
        }
    }

    /// Parameters and all states averaged on every step; billed as a single
    /// gradient all-reduce per step.
    pub fn is_every_step(&self) -> bool {
        self.params == SyncMode::Periodic(1)
            && self.states.iter().all(|m| *m == SyncMode::Periodic(1))
    }

    /// Period after which every quantity has been averaged on the same step.
    pub fn round_period(&self) -> u64 {
        let periods: Vec<u64> = self
            .policies()
            .iter()
            .filter_map(|p| self.nominal_period(p.quantity))
            .collect();
        k_lcm(&periods).unwrap_or(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncAction {
    Skip,
    Average,
    Reset,
}

/// What happens to every quantity on one step; shared by all workers.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncDecision {
    pub step: u64,
    pub params: SyncAction,
    pub states: Vec<SyncAction>,
}

impl SyncDecision {
    pub fn action(&self, q: Quantity) -> SyncAction {
        match q {
            Quantity::Params => self.params,
            Quantity::State(j) => self.states[j],
        }
    }

    pub fn fired(&self, q: Quantity) -> bool {
        self.action(q) != SyncAction::Skip
    }

    pub fn averaged_count(&self) -> usize {
        std::iter::once(&self.params)
            .chain(&self.states)
            .filter(|a| **a == SyncAction::Average)
            .count()
    }
}

/// Whether a quantity syncs at step `t`.
///
/// Probabilistic modes consume exactly one draw from `coin` per call, so the
/// stream position depends only on `t`. `params_fired` is consulted by
/// [`SyncMode::ResetWithParams`].
pub fn should_sync(t: u64, mode: SyncMode, coin: &mut Stream, params_fired: bool) -> bool {
    match mode {
        SyncMode::Periodic(k) => t % k == 0,
        SyncMode::Probabilistic(p) => coin.random::<f64>() < p,
        SyncMode::Never => false,
        SyncMode::ResetWithParams => params_fired,
    }
}

/// Produces the collective [`SyncDecision`] for each step.
#[derive(Clone, Debug)]
pub struct SyncScheduler {
    policies: SyncPolicies,
    params_coin: Stream,
    state_coins: Vec<Stream>,
}

impl SyncScheduler {
    pub fn new(policies: SyncPolicies, seed: u64) -> Self {
        let params_coin = rng::stream(seed, Domain::Schedule, 0);
        let state_coins = (0..policies.states.len())
            .map(|j| rng::stream(seed, Domain::Schedule, 1 + j as u64))
            .collect();
        SyncScheduler {
            policies,
            params_coin,
            state_coins,
        }
    }

    pub fn policies(&self) -> &SyncPolicies {
        &self.policies
    }

    pub fn decide(&mut self, t: u64) -> SyncDecision {
        let params_fired = should_sync(t, self.policies.params, &mut self.params_coin, false);
        let params = if params_fired {
            SyncAction::Average
        } else {
            SyncAction::Skip
        };
        let states = self
            .policies
            .states
            .iter()
            .zip(self.state_coins.iter_mut())
            .map(|(&mode, coin)| {
                if !should_sync(t, mode, coin, params_fired) {
                    SyncAction::Skip
                } else if mode == SyncMode::ResetWithParams {
                    SyncAction::Reset
                } else {
                    SyncAction::Average
                }
            })
            .collect();
        SyncDecision {
            step: t,
            params,
            states,
        }
    }
}

fn average_slot<F>(workers: &mut [WorkerState], mut slot: F) -> Result<()>
where
    F: FnMut(&mut WorkerState) -> Option<&mut ParamVector>,
{
    let mut values = Vec::with_capacity(workers.len());
    for w in workers.iter_mut() {
        let v = slot(w).ok_or_else(|| Error::invalid("worker state layout mismatch"))?;
        values.push(v.clone());
    }
    let mean = mean_across_workers(&values)?;
    for w in workers.iter_mut() {
        if let Some(v) = slot(w) {
            *v = mean.clone();
        }
    }
    Ok(())
}

/// Applies `decision` to all replicas and returns the payload units billed.
///
/// Averaged quantities are replaced by the cross-worker mean; reset
/// quantities return to zeros (the AMSGrad maximum resets along with `v`).
/// Must be called after every worker finished computing its step-`t`
/// gradient and before any local update.
pub fn apply_sync(
    workers: &mut [WorkerState],
    decision: &SyncDecision,
    policies: &SyncPolicies,
) -> Result<u64> {
    let Some(first) = workers.first() else {
        return Err(Error::invalid("no workers to synchronize"));
    };
    let dim = first.x.len();
    let slots = first.opt.slot_count();
    if decision.states.len() != slots {
        return Err(Error::invalid(format!(
            "decision covers {} states but workers hold {slots}",
            decision.states.len()
        )));
    }
    if workers
        .iter()
        .any(|w| w.x.len() != dim || w.opt.slot_count() != slots)
    {
        return Err(Error::invalid("worker state layout mismatch"));
    }

    if decision.params == SyncAction::Average {
        average_slot(workers, |w| Some(&mut w.x))?;
    }
    for (j, action) in decision.states.iter().enumerate() {
        match action {
            SyncAction::Skip => {}
            SyncAction::Average => average_slot(workers, |w| w.opt.slot_mut(j))?,
            SyncAction::Reset => {
                for w in workers.iter_mut() {
                    if let Some(s) = w.opt.slot_mut(j) {
                        *s = ParamVector::zeros(dim);
                    }
                    if j == 1 {
                        if let Some(vt) = w.opt.v_tilde.as_mut() {
                            *vt = ParamVector::zeros(dim);
                        }
                    }
                }
            }
        }
    }
    Ok(step_payload_units(decision, policies, workers.len()))
}
