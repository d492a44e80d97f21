//! Multi-worker training loop over analytic objectives.
//!
//! Each step runs, in order: membership events scheduled for the step, the
//! collective sync decision, per-worker stochastic gradients at the local
//! iterates, the sync barrier (averaging or resetting the previous states and
//! the current parameters), per-worker local updates, a divergence check and
//! metrics. Per-worker phases may run on a thread pool; all reductions happen
//! on the calling thread in worker order, so results never depend on the
//! thread count.

pub mod baseline;
mod objective;
mod schedule;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DriftSummary, MetricsOptions, MetricsRow, MetricsTracker, RateSample};
use crate::optim::{self, OptimizerKind, OptimizerSpec, OptimizerState};
use crate::rng::{self, Domain, Stream};
use crate::sync::{apply_sync, SyncAction, SyncDecision, SyncPolicies, SyncScheduler};
use crate::vecmath::{mean_across_workers, ParamVector};

pub use objective::{Function, LocalObjective, NoiseModel, Objective};
pub use schedule::{eta_at, LrSchedule};

/// How joining workers are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinInit {
    /// Cross-worker mean of the parameters and of every optimizer state.
    MeanBroadcast,
    /// Copies of worker 0.
    ReplicateWorkerZero,
}

/// Workers joining at the start of `step`, before gradients are computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipEvent {
    pub step: u64,
    pub add_workers: usize,
    pub init: JoinInit,
}

fn default_record_every() -> u64 {
    1
}

fn default_threads() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub workers: usize,
    pub steps: u64,
    pub optimizer: OptimizerSpec,
    pub schedule: LrSchedule,
    pub sync: SyncPolicies,
    pub objective: Objective,
    #[serde(default)]
    pub events: Vec<MembershipEvent>,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Worker threads for the per-worker phases; 1 runs everything inline.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub metrics: MetricsOptions,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "need at least one worker"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "need at least one step"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        self.optimizer.validate()?;
        self.sync.validate(self.optimizer.kind.state_count())?;
        self.schedule.validate(self.steps)?;
        self.objective.validate()?;
        for (i, e) in self.events.iter().enumerate() {
            if e.step == 0 || e.step >= self.steps {
                return Err(Error::config(
                    format!("events[{i}].step"),
                    format!("must lie in (0, {}), got {}", self.steps, e.step),
                ));
            }
            if e.add_workers == 0 {
                return Err(Error::config(
                    format!("events[{i}].add_workers"),
                    "must be positive",
                ));
            }
        }
        for (j, w) in [self.metrics.rate_window_u, self.metrics.rate_window_v]
            .iter()
            .enumerate()
        {
            if *w == Some(0) {
                let name = if j == 0 { "rate_window_u" } else { "rate_window_v" };
                return Err(Error::config(format!("metrics.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// One worker's replica.
#[derive(Clone, Debug)]
pub struct WorkerState {
    pub id: usize,
    pub x: ParamVector,
    pub opt: OptimizerState,
    pub noise_stream: Stream,
    /// This worker's objective and noise level.
    pub local: LocalObjective,
    /// Raw stochastic gradient of the latest step.
    pub grad: ParamVector,
    /// Clipped gradient consumed by the latest update.
    pub grad_hat: ParamVector,
    /// Pre-sync second momentum used as ADOPT's normalizer.
    adopt_normalizer: Option<ParamVector>,
}

impl WorkerState {
    /// A fresh worker at `x` with zero optimizer state. Its noise stream and
    /// local objective depend only on `(seed, id)`.
    pub fn new(id: usize, x: ParamVector, spec: &OptimizerSpec, objective: &Objective, seed: u64) -> Self {
        let dim = x.len();
        WorkerState {
            id,
            opt: OptimizerState::new(spec, dim),
            noise_stream: rng::stream(seed, Domain::WorkerNoise, id as u64),
            local: objective.local(seed, id),
            grad: ParamVector::zeros(dim),
            grad_hat: ParamVector::zeros(dim),
            adopt_normalizer: None,
            x,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.local.sigma()
    }

    /// Samples and clips the step gradient at the current local iterate.
    pub fn compute_gradient(&mut self, spec: &OptimizerSpec) -> Result<()> {
        self.grad = self.local.stochastic_gradient(&self.x, &mut self.noise_stream);
        self.grad_hat = spec.clip.apply(&self.grad)?;
        if spec.kind == OptimizerKind::Adopt {
            self.adopt_normalizer = self.opt.v.clone();
        }
        Ok(())
    }

    /// Applies the local optimizer update using the gradient from
    /// [`WorkerState::compute_gradient`].
    pub fn local_update(&mut self, eta: f64, spec: &OptimizerSpec) -> Result<()> {
        let (x, opt) = optim::step(
            &self.x,
            &self.opt,
            &self.grad_hat,
            eta,
            spec,
            self.adopt_normalizer.as_ref(),
        )?;
        self.x = x;
        self.opt = opt;
        Ok(())
    }

    fn non_finite(&self) -> Option<&'static str> {
        if !self.x.is_finite() {
            return Some("x");
        }
        self.opt.non_finite()
    }
}

/// Adds `event.add_workers` workers with ids continuing the current range.
pub fn apply_membership(
    workers: &mut Vec<WorkerState>,
    event: &MembershipEvent,
    spec: &OptimizerSpec,
    objective: &Objective,
    seed: u64,
) -> Result<()> {
    let template = match event.init {
        JoinInit::ReplicateWorkerZero => workers
            .first()
            .map(|w| (w.x.clone(), w.opt.clone()))
            .ok_or_else(|| Error::invalid("no worker to replicate"))?,
        JoinInit::MeanBroadcast => {
            let x = mean_across_workers(workers.iter().map(|w| &w.x))?;
            let u = mean_across_workers(workers.iter().map(|w| &w.opt.u))?;
            let mean_opt = |f: fn(&OptimizerState) -> Option<&ParamVector>| -> Result<Option<ParamVector>> {
                let parts: Vec<&ParamVector> = workers.iter().filter_map(|w| f(&w.opt)).collect();
                if parts.is_empty() {
                    Ok(None)
                } else {
                    mean_across_workers(parts).map(Some)
                }
            };
            let v = mean_opt(|o| o.v.as_ref())?;
            let v_tilde = mean_opt(|o| o.v_tilde.as_ref())?;
            (x, OptimizerState { u, v, v_tilde })
        }
    };
    let first_id = workers.len();
    for id in first_id..first_id + event.add_workers {
        let mut w = WorkerState::new(id, template.0.clone(), spec, objective, seed);
        w.opt = template.1.clone();
        workers.push(w);
    }
    Ok(())
}

/// Outcome of one simulated step.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: u64,
    pub decision: SyncDecision,
    pub payload_units: u64,
    pub eta: f64,
    pub row: Option<MetricsRow>,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub rows: Vec<MetricsRow>,
    pub workers: Vec<WorkerState>,
    pub cum_payload_units: u64,
    pub drift: DriftSummary,
    pub rate_u: Vec<RateSample>,
    pub rate_v: Vec<RateSample>,
}

impl SimOutput {
    pub fn final_dist_to_opt(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.dist_to_opt)
    }

    pub fn mean_params(&self) -> ParamVector {
        mean_across_workers(self.workers.iter().map(|w| &w.x)).expect("at least one worker")
    }
}

/// Step-by-step driver of one run.
pub struct Simulator {
    config: SimConfig,
    workers: Vec<WorkerState>,
    scheduler: SyncScheduler,
    tracker: MetricsTracker,
    pool: Option<rayon::ThreadPool>,
    t: u64,
    joined_through: Option<u64>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let start = config.objective.start_point();
        let workers: Vec<WorkerState> = (0..config.workers)
            .map(|id| WorkerState::new(id, start.clone(), &config.optimizer, &config.objective, config.seed))
            .collect();
        let scheduler = SyncScheduler::new(config.sync.clone(), config.seed);
        let tracker = MetricsTracker::new(
            config.optimizer,
            &config.sync,
            &config.metrics,
            config.record_every,
            &workers,
        );
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Simulator {
            config,
            workers,
            scheduler,
            tracker,
            pool,
            t: 0,
            joined_through: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn current_step(&self) -> u64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.steps
    }

    pub fn tracker(&self) -> &MetricsTracker {
        &self.tracker
    }

    pub fn mean_params(&self) -> ParamVector {
        mean_across_workers(self.workers.iter().map(|w| &w.x)).expect("at least one worker")
    }

    pub fn optimum(&self) -> Option<ParamVector> {
        let locals: Vec<&LocalObjective> = self.workers.iter().map(|w| &w.local).collect();
        self.config.objective.optimum(&locals)
    }

    fn for_each_worker<F>(&mut self, f: F) -> Result<()>
    where
        F: Fn(&mut WorkerState) -> Result<()> + Sync + Send,
    {
        let results: Vec<Result<()>> = match &self.pool {
            Some(pool) => pool.install(|| self.workers.par_iter_mut().map(&f).collect()),
            None => self.workers.iter_mut().map(&f).collect(),
        };
        results.into_iter().collect()
    }

    /// Joins the workers scheduled for the current step. Idempotent within a step.
    pub fn apply_pending_membership(&mut self) -> Result<()> {
        let t = self.t;
        if self.joined_through == Some(t) {
            return Ok(());
        }
        self.joined_through = Some(t);
        let events: Vec<MembershipEvent> = self
            .config
            .events
            .iter()
            .filter(|e| e.step == t)
            .copied()
            .collect();
        for event in &events {
            apply_membership(
                &mut self.workers,
                event,
                &self.config.optimizer,
                &self.config.objective,
                self.config.seed,
            )?;
        }
        if !events.is_empty() {
            self.tracker.on_join(&self.workers);
        }
        Ok(())
    }

    /// Runs step `t` and advances to `t + 1`.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::invalid("run already finished"));
        }
        let t = self.t;
        self.apply_pending_membership()?;
        let decision = self.scheduler.decide(t);
        let eta = eta_at(t, &self.config.schedule, self.config.steps)?;
        let spec = self.config.optimizer;

        self.for_each_worker(|w| w.compute_gradient(&spec))?;
        if spec.kind == OptimizerKind::Adopt && decision.states.get(1) == Some(&SyncAction::Reset) {
            // A reset second momentum restarts the normalizer from zero.
            for w in &mut self.workers {
                w.adopt_normalizer = w.opt.v.as_ref().map(|v| ParamVector::zeros(v.len()));
            }
        }
        let payload_units = apply_sync(&mut self.workers, &decision, &self.config.sync)?;
        self.tracker.add_payload(payload_units);
        self.tracker.on_sync(&decision, &self.workers);

        self.for_each_worker(|w| w.local_update(eta, &spec))?;
        for w in &self.workers {
            if let Some(quantity) = w.non_finite() {
                return Err(Error::Divergence {
                    step: t,
                    worker: w.id,
                    quantity: quantity.to_string(),
                });
            }
        }

        let optimum = self.optimum();
        let row = self.tracker.on_step(t, &self.workers, eta, optimum.as_ref());
        self.t += 1;
        Ok(StepReport {
            step: t,
            decision,
            payload_units,
            eta,
            row,
        })
    }

    pub fn finish(self, rows: Vec<MetricsRow>) -> SimOutput {
        SimOutput {
            rows,
            cum_payload_units: self.tracker.cum_payload(),
            drift: self.tracker.drift_summary(),
            rate_u: self.tracker.rate_series_u().to_vec(),
            rate_v: self.tracker.rate_series_v().to_vec(),
            workers: self.workers,
        }
    }
}

/// Runs `config` to completion, handing each recorded row to `sink` as it is
/// produced.
pub fn run_streaming<F>(config: SimConfig, mut sink: F) -> Result<SimOutput>
where
    F: FnMut(&MetricsRow) -> Result<()>,
{
    let mut sim = Simulator::new(config)?;
    let mut rows = Vec::new();
    while !sim.is_done() {
        if let Some(row) = sim.step()?.row {
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok(sim.finish(rows))
}

/// Runs `config` to completion.
pub fn run(config: SimConfig) -> Result<SimOutput> {
    run_streaming(config, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Clipping;

    fn quad_config(workers: usize, sigma: f64) -> SimConfig {
        SimConfig {
            workers,
            steps: 200,
            optimizer: OptimizerSpec::adam(0.9, 0.99),
            schedule: LrSchedule::Constant { eta: 0.01 },
            sync: SyncPolicies::des_loc(8, &[16, 32]),
            objective: Objective::quadratic(
                vec![1.0, -1.0, 0.5],
                vec![1.0, 2.0, 0.5],
                NoiseModel::IidGaussian { sigma },
            ),
            events: vec![],
            seed: 17,
            record_every: 10,
            threads: 1,
            metrics: MetricsOptions::default(),
        }
    }

    #[test]
    fn records_expected_rows() {
        let out = run(quad_config(4, 0.3)).unwrap();
        assert_eq!(out.rows.len(), 20);
        assert_eq!(out.rows[0].step, 9);
        assert_eq!(out.rows.last().unwrap().step, 199);
        assert!(out.rows.windows(2).all(|w| w[0].cum_payload_units <= w[1].cum_payload_units));
    }

    #[test]
    fn single_worker_matches_plain_optimizer() {
        let cfg = quad_config(1, 0.5);
        let out = run(cfg.clone()).unwrap();

        let mut w = WorkerState::new(0, cfg.objective.start_point(), &cfg.optimizer, &cfg.objective, cfg.seed);
        for _ in 0..cfg.steps {
            w.compute_gradient(&cfg.optimizer).unwrap();
            w.local_update(0.01, &cfg.optimizer).unwrap();
        }
        assert_eq!(out.workers[0].x, w.x);
        assert_eq!(out.workers[0].opt, w.opt);
        assert_eq!(out.cum_payload_units, 0);
    }

    #[test]
    fn zero_noise_keeps_replicas_identical() {
        let out = run(quad_config(5, 0.0)).unwrap();
        let x0 = &out.workers[0];
        for w in &out.workers[1..] {
            assert_eq!(w.x, x0.x);
            assert_eq!(w.opt, x0.opt);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = quad_config(2, 0.0);
        cfg.optimizer = OptimizerSpec::sgdm(0.0);
        cfg.sync = SyncPolicies::local(4, 1);
        cfg.schedule = LrSchedule::Constant { eta: 10.0 };
        cfg.steps = 2000;
        let err = run(cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = quad_config(2, 0.1);
        cfg.sync.states.pop();
        assert!(matches!(
            Simulator::new(cfg).err(),
            Some(Error::InvalidConfig { path, .. }) if path == "sync.states"
        ));

        let mut cfg = quad_config(2, 0.1);
        cfg.events.push(MembershipEvent {
            step: 200,
            add_workers: 2,
            init: JoinInit::MeanBroadcast,
        });
        assert!(Simulator::new(cfg).is_err());

        let mut cfg = quad_config(2, 0.1);
        cfg.optimizer = cfg.optimizer.with_clip(Clipping::Coordinatewise { rho: -1.0 });
        assert!(Simulator::new(cfg).is_err());
    }

    #[test]
    fn membership_adds_workers_with_fresh_ids() {
        let mut cfg = quad_config(3, 0.2);
        cfg.events.push(MembershipEvent {
            step: 50,
            add_workers: 3,
            init: JoinInit::ReplicateWorkerZero,
        });
        let mut sim = Simulator::new(cfg).unwrap();
        while sim.current_step() < 50 {
            sim.step().unwrap();
        }
        let w0 = sim.workers()[0].clone();
        sim.apply_pending_membership().unwrap();
        assert_eq!(sim.workers().len(), 6);
        for (i, w) in sim.workers()[3..].iter().enumerate() {
            assert_eq!(w.id, 3 + i);
            assert_eq!(w.x, w0.x);
            assert_eq!(w.opt, w0.opt);
        }
    }
}
