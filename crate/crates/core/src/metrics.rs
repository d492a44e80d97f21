//! Online diagnostics: losses and norms, relative rates of change of the
//! optimizer states, clipped-momentum drift checks and payload accounting.

use serde::{Deserialize, Serialize};

use crate::optim::{drift_bound_first, drift_bound_second, OptimizerKind, OptimizerSpec};
use crate::sim::WorkerState;
use crate::sync::{Quantity, SyncAction, SyncDecision, SyncPolicies};
use crate::vecmath::{mean_across_workers, ParamVector};

/// One recorded row. Field order is the CSV column order.
///
/// `None` marks a value that is undefined at this step (no optimum known,
/// no completed rate window, or no applicable drift bound).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub round: u64,
    pub worker_count: usize,
    pub loss_mean: f64,
    pub grad_norm_mean: f64,
    pub param_norm_mean: f64,
    pub dist_to_opt: Option<f64>,
    pub rel_change_u: Option<f64>,
    pub rel_change_v: Option<f64>,
    pub drift_u_observed: Option<f64>,
    pub drift_u_bound: Option<f64>,
    pub drift_v_observed: Option<f64>,
    pub drift_v_bound: Option<f64>,
    pub cum_payload_units: u64,
    pub eta: f64,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 15] = [
        "step",
        "round",
        "worker_count",
        "loss_mean",
        "grad_norm_mean",
        "param_norm_mean",
        "dist_to_opt",
        "rel_change_u",
        "rel_change_v",
        "drift_u_observed",
        "drift_u_bound",
        "drift_v_observed",
        "drift_v_bound",
        "cum_payload_units",
        "eta",
    ];
}

/// `||s_now - s_prev||_2 / ||s_prev||_2`, or `None` when `s_prev` is zero.
pub fn relative_rate_of_change(s_prev: &ParamVector, s_now: &ParamVector) -> Option<f64> {
    let denom = s_prev.l2_norm();
    if denom == 0.0 {
        return None;
    }
    let diff = s_now.sub(s_prev).ok()?;
    Some(diff.l2_norm() / denom)
}

/// Payload units billed for one step's decision; one unit is one
/// `d`-sized vector all-reduced once.
///
/// Averaged quantities each cost one unit; resets are free. A configuration
/// that averages everything on every step is billed as a single gradient
/// all-reduce. Nothing is billed at `t = 0` (replicas are identical) or
/// with a single worker.
pub fn step_payload_units(decision: &SyncDecision, policies: &SyncPolicies, workers: usize) -> u64 {
    if decision.step == 0 || workers <= 1 {
        return 0;
    }
    if policies.is_every_step() {
        return 1;
    }
    decision.averaged_count() as u64
}

/// Cumulative payload over a whole run of `steps` steps.
pub fn payload_units<I>(decisions: I, policies: &SyncPolicies, workers: usize) -> u64
where
    I: IntoIterator<Item = SyncDecision>,
{
    decisions
        .into_iter()
        .map(|d| step_payload_units(&d, policies, workers))
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsOptions {
    /// Rate-of-change window for the first momentum; defaults to its sync period.
    #[serde(default)]
    pub rate_window_u: Option<u64>,
    /// Rate-of-change window for the second momentum; defaults to its sync period.
    #[serde(default)]
    pub rate_window_v: Option<u64>,
}

/// A completed rate-of-change window ending after `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub step: u64,
    pub value: Option<f64>,
}

#[derive(Clone, Debug)]
struct RateTracker {
    window: u64,
    prev: Option<ParamVector>,
    last: Option<f64>,
    series: Vec<RateSample>,
}

impl RateTracker {
    fn new(window: u64) -> Self {
        RateTracker {
            window: window.max(1),
            prev: None,
            last: None,
            series: Vec::new(),
        }
    }

    fn observe(&mut self, completed: u64, step: u64, mean_state: impl FnOnce() -> ParamVector) {
        if completed % self.window != 0 {
            return;
        }
        let now = mean_state();
        if let Some(prev) = &self.prev {
            self.last = relative_rate_of_change(prev, &now);
            self.series.push(RateSample {
                step,
                value: self.last,
            });
        }
        self.prev = Some(now);
    }
}

#[derive(Clone, Debug)]
struct DriftBaseline {
    u: ParamVector,
    u_steps: u64,
    v: Option<ParamVector>,
    v_steps: u64,
}

impl DriftBaseline {
    fn of(w: &WorkerState) -> Self {
        DriftBaseline {
            u: w.opt.u.clone(),
            u_steps: 0,
            v: w.opt.v.clone(),
            v_steps: 0,
        }
    }
}

/// Totals of the online drift check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub checks: u64,
    pub violations: u64,
    /// Largest `observed / bound` ratio seen over checks with a positive bound.
    pub max_ratio: f64,
}

/// Per-run metrics state, driven by the simulator on its barrier thread.
#[derive(Clone, Debug)]
pub struct MetricsTracker {
    spec: OptimizerSpec,
    record_every: u64,
    round_period: u64,
    rate_u: RateTracker,
    rate_v: Option<RateTracker>,
    baselines: Vec<DriftBaseline>,
    drift: DriftSummary,
    cum_payload: u64,
}

impl MetricsTracker {
    pub fn new(
        spec: OptimizerSpec,
        policies: &SyncPolicies,
        options: &MetricsOptions,
        record_every: u64,
        workers: &[WorkerState],
    ) -> Self {
        let fallback = policies.nominal_period(Quantity::Params).unwrap_or(1);
        let window_for = |j: usize, explicit: Option<u64>| {
            explicit
                .or_else(|| policies.nominal_period(Quantity::State(j)))
                .unwrap_or(fallback)
        };
        let has_v = spec.kind != OptimizerKind::Sgdm;
        MetricsTracker {
            spec,
            record_every: record_every.max(1),
            round_period: policies.round_period(),
            rate_u: RateTracker::new(window_for(0, options.rate_window_u)),
            rate_v: has_v.then(|| RateTracker::new(window_for(1, options.rate_window_v))),
            baselines: workers.iter().map(DriftBaseline::of).collect(),
            drift: DriftSummary::default(),
            cum_payload: 0,
        }
    }

    /// Re-anchors drift windows of every quantity touched by `decision`.
    /// Call right after the sync is applied, before local updates.
    pub fn on_sync(&mut self, decision: &SyncDecision, workers: &[WorkerState]) {
        for (b, w) in self.baselines.iter_mut().zip(workers) {
            if decision.action(Quantity::State(0)) != SyncAction::Skip {
                b.u = w.opt.u.clone();
                b.u_steps = 0;
            }
            if decision.states.len() > 1 && decision.action(Quantity::State(1)) != SyncAction::Skip {
                b.v = w.opt.v.clone();
                b.v_steps = 0;
            }
        }
    }

    /// Starts drift windows for workers that just joined.
    pub fn on_join(&mut self, workers: &[WorkerState]) {
        for w in &workers[self.baselines.len()..] {
            self.baselines.push(DriftBaseline::of(w));
        }
    }

    pub fn add_payload(&mut self, units: u64) {
        self.cum_payload += units;
    }

    pub fn cum_payload(&self) -> u64 {
        self.cum_payload
    }

    pub fn drift_summary(&self) -> DriftSummary {
        self.drift
    }

    pub fn rate_series_u(&self) -> &[RateSample] {
        &self.rate_u.series
    }

    pub fn rate_series_v(&self) -> &[RateSample] {
        self.rate_v.as_ref().map_or(&[], |r| &r.series)
    }

    pub fn round_period(&self) -> u64 {
        self.round_period
    }

    fn bound_u(&self, k: u64) -> Option<f64> {
        let rho = self.spec.clip.radius()?;
        match self.spec.kind {
            // ADOPT's first momentum averages normalized gradients, which
            // clipping does not bound.
            OptimizerKind::Adopt => None,
            OptimizerKind::Sgdm | OptimizerKind::Adam => drift_bound_first(rho, self.spec.beta1, k).ok(),
        }
    }

    fn bound_v(&self, k: u64) -> Option<f64> {
        let rho = self.spec.clip.radius()?;
        drift_bound_second(rho, self.spec.beta2, k).ok()
    }

    fn check(&mut self, observed: f64, bound: Option<f64>) {
        let Some(bound) = bound else { return };
        self.drift.checks += 1;
        if observed > bound {
            self.drift.violations += 1;
        }
        if bound > 0.0 {
            self.drift.max_ratio = self.drift.max_ratio.max(observed / bound);
        }
    }

    /// Updates drift and rate trackers after step `t` and returns a row when
    /// `t + 1` is a multiple of the recording interval.
    pub fn on_step(
        &mut self,
        t: u64,
        workers: &[WorkerState],
        eta: f64,
        optimum: Option<&ParamVector>,
    ) -> Option<MetricsRow> {
        let mut u_obs: Option<f64> = None;
        let mut v_obs: Option<f64> = None;
        let mut u_steps = 0;
        let mut v_steps = 0;
        let mut checks = Vec::with_capacity(workers.len() * 2);
        for (b, w) in self.baselines.iter_mut().zip(workers) {
            b.u_steps += 1;
            let du = w.opt.u.sub(&b.u).map(|d| d.linf_norm()).unwrap_or(f64::NAN);
            checks.push((du, true, b.u_steps));
            u_obs = Some(u_obs.map_or(du, |m| m.max(du)));
            u_steps = u_steps.max(b.u_steps);
            if let (Some(v), Some(bv)) = (&w.opt.v, &b.v) {
                b.v_steps += 1;
                let dv = v.sub(bv).map(|d| d.linf_norm()).unwrap_or(f64::NAN);
                checks.push((dv, false, b.v_steps));
                v_obs = Some(v_obs.map_or(dv, |m| m.max(dv)));
                v_steps = v_steps.max(b.v_steps);
            }
        }
        for (obs, first, k) in checks {
            let bound = if first { self.bound_u(k) } else { self.bound_v(k) };
            self.check(obs, bound);
        }

        let completed = t + 1;
        self.rate_u.observe(completed, t, || mean_slot(workers, 0));
        if let Some(rv) = self.rate_v.as_mut() {
            rv.observe(completed, t, || mean_slot(workers, 1));
        }

        if completed % self.record_every != 0 {
            return None;
        }
        let m = workers.len() as f64;
        let loss_mean = workers.iter().map(|w| w.local.loss(&w.x)).sum::<f64>() / m;
        let grad_norm_mean = workers.iter().map(|w| w.grad.l2_norm()).sum::<f64>() / m;
        let param_norm_mean = workers.iter().map(|w| w.x.l2_norm()).sum::<f64>() / m;
        let dist_to_opt = optimum.and_then(|opt| {
            let mean_x = mean_across_workers(workers.iter().map(|w| &w.x)).ok()?;
            Some(mean_x.sub(opt).ok()?.l2_norm())
        });
        let u_bound = self.bound_u(u_steps);
        let v_bound = if v_obs.is_some() { self.bound_v(v_steps) } else { None };
        Some(MetricsRow {
            step: t,
            round: t / self.round_period,
            worker_count: workers.len(),
            loss_mean,
            grad_norm_mean,
            param_norm_mean,
            dist_to_opt,
            rel_change_u: self.rate_u.last,
            rel_change_v: self.rate_v.as_ref().and_then(|r| r.last),
            drift_u_observed: u_obs.filter(|_| u_bound.is_some()),
            drift_u_bound: u_bound,
            drift_v_observed: v_obs.filter(|_| v_bound.is_some()),
            drift_v_bound: v_bound,
            cum_payload_units: self.cum_payload,
            eta,
        })
    }
}

fn mean_slot(workers: &[WorkerState], j: usize) -> ParamVector {
    let slots: Vec<&ParamVector> = workers.iter().filter_map(|w| w.opt.slot(j)).collect();
    mean_across_workers(slots).expect("workers share one state layout")
}
