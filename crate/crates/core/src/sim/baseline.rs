//! Dedicated Local Adam loop: every `k` steps the parameters and both
//! moments are averaged, otherwise workers run plain local Adam.
//!
//! It shares the per-worker primitives with the general simulator but not its
//! scheduler, sync or metrics machinery.

use crate::error::{Error, Result};
use crate::optim::{adam_param_step, adam_update_states, OptimizerKind};
use crate::vecmath::{mean_across_workers, ParamVector};

use super::{eta_at, SimConfig, WorkerState};

/// Final replicas and the mean iterate after every step.
#[derive(Clone, Debug)]
pub struct LocalAdamTrace {
    pub workers: Vec<WorkerState>,
    pub mean_params: Vec<ParamVector>,
}

pub fn run_local_adam(config: &SimConfig, k: u64) -> Result<LocalAdamTrace> {
    if config.optimizer.kind != OptimizerKind::Adam {
        return Err(Error::invalid("the Local Adam baseline needs an adam optimizer"));
    }
    if k == 0 {
        return Err(Error::invalid("sync period must be positive"));
    }
    if !config.events.is_empty() {
        return Err(Error::invalid("the Local Adam baseline has no membership events"));
    }
    config.optimizer.validate()?;
    config.objective.validate()?;

    let spec = config.optimizer;
    let start = config.objective.start_point();
    let mut workers: Vec<WorkerState> = (0..config.workers)
        .map(|id| WorkerState::new(id, start.clone(), &spec, &config.objective, config.seed))
        .collect();
    let mut mean_params = Vec::with_capacity(config.steps as usize);

    for t in 0..config.steps {
        let eta = eta_at(t, &config.schedule, config.steps)?;
        for w in workers.iter_mut() {
            w.grad = w.local.stochastic_gradient(&w.x, &mut w.noise_stream);
            w.grad_hat = spec.clip.apply(&w.grad)?;
        }
        if t % k == 0 {
            let x = mean_across_workers(workers.iter().map(|w| &w.x))?;
            let u = mean_across_workers(workers.iter().map(|w| &w.opt.u))?;
            let v = mean_across_workers(workers.iter().filter_map(|w| w.opt.v.as_ref()))?;
            for w in workers.iter_mut() {
                w.x = x.clone();
                w.opt.u = u.clone();
                w.opt.v = Some(v.clone());
            }
        }
        for w in workers.iter_mut() {
            let next = adam_update_states(&w.opt, &w.grad_hat, &spec)?;
            w.x = adam_param_step(&w.x, &next, eta, &spec)?;
            w.opt = next;
        }
        mean_params.push(mean_across_workers(workers.iter().map(|w| &w.x))?);
    }
    Ok(LocalAdamTrace {
        workers,
        mean_params,
    })
}
