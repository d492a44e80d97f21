//! Closed-form wall-clock model for data-parallel training methods.
//!
//! Compute time is `6 d D / (MFU * S * M)`. Each synchronization event is a
//! Ring-AllReduce of a `d`-parameter payload taking `2P/B (1 - 1/M) + l`
//! seconds. Event counts use the continuous `T / K` form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per parameter assumed when converting link speeds.
pub const DEFAULT_BYTES_PER_PARAM: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelParams {
    /// Model parameter count.
    pub d: f64,
    /// Total training tokens.
    pub tokens: f64,
    pub workers: f64,
    /// Peak FLOP/s per worker.
    pub peak_flops: f64,
    pub mfu: f64,
    /// Peer-to-peer bandwidth in parameters per second.
    pub bandwidth: f64,
    /// Per-collective latency in seconds.
    pub latency: f64,
    /// Total optimizer steps.
    pub steps: f64,
    /// Fraction of communication time not hidden behind compute; 1 means no
    /// overlap.
    #[serde(default = "default_overlap")]
    pub overlap: f64,
}

fn default_overlap() -> f64 {
    1.0
}

impl CostModelParams {
    /// 1.7B-parameter model trained on 40B tokens with 2M-token global
    /// batches (20 000 steps) across 4 workers.
    pub fn llm_1_7b() -> Self {
        CostModelParams {
            d: 1.7e9,
            tokens: 4e10,
            workers: 4.0,
            peak_flops: 989e12,
            mfu: 0.4,
            bandwidth: bandwidth_from_gbps(100.0, DEFAULT_BYTES_PER_PARAM),
            latency: 1e-3,
            steps: 20_000.0,
            overlap: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("tokens", self.tokens),
            ("workers", self.workers),
            ("peak_flops", self.peak_flops),
            ("mfu", self.mfu),
            ("bandwidth", self.bandwidth),
            ("steps", self.steps),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::config(
                    format!("cost_model.{name}"),
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if !(self.latency >= 0.0) || !self.latency.is_finite() {
            return Err(Error::config(
                "cost_model.latency",
                format!("must be non-negative and finite, got {}", self.latency),
            ));
        }
        if self.mfu > 1.0 {
            return Err(Error::config("cost_model.mfu", "must not exceed 1"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::config("cost_model.overlap", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Converts a link speed in Gbit/s to parameters per second.
pub fn bandwidth_from_gbps(gbps: f64, bytes_per_param: f64) -> f64 {
    gbps * 1e9 / 8.0 / bytes_per_param
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ddp,
    /// Parameters only, every `k` steps.
    FedAvg(u64),
    /// Parameters and both moments, every `k` steps.
    LocalAdam(u64),
    /// Independent periods for parameters, first and second moment.
    DesLoc(u64, u64, u64),
}

impl Method {
    pub fn name(&self) -> String {
        match *self {
            Method::Ddp => "ddp".to_string(),
            Method::FedAvg(k) => format!("fedavg({k})"),
            Method::LocalAdam(k) => format!("local_adam({k})"),
            Method::DesLoc(x, u, v) => format!("des_loc({x},{u},{v})"),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Method::Ddp => true,
            Method::FedAvg(k) | Method::LocalAdam(k) => k > 0,
            Method::DesLoc(x, u, v) => x > 0 && u > 0 && v > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{}: sync periods must be positive", self.name())))
        }
    }
}

/// Continuous count of `d`-sized all-reduce events over `steps` steps.
pub fn sync_events(method: Method, steps: f64) -> f64 {
    match method {
        Method::Ddp => steps,
        Method::FedAvg(k) => steps / k as f64,
        Method::LocalAdam(k) => 3.0 * steps / k as f64,
        Method::DesLoc(kx, ku, kv) => steps / kx as f64 + steps / ku as f64 + steps / kv as f64,
    }
}

pub fn t_compute(p: &CostModelParams) -> f64 {
    6.0 * p.d * p.tokens / (p.mfu * p.peak_flops * p.workers)
}

/// Ring-AllReduce time for a payload of `payload` parameters.
pub fn t_ring(payload: f64, p: &CostModelParams) -> f64 {
    2.0 * payload / p.bandwidth * (1.0 - 1.0 / p.workers) + p.latency
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub compute: f64,
    pub comms: f64,
    pub total: f64,
    pub events: f64,
}

pub fn t_total(method: Method, p: &CostModelParams) -> Result<CostBreakdown> {
    p.validate()?;
    method.validate()?;
    let compute = t_compute(p);
    let events = sync_events(method, p.steps);
    let comms = p.overlap * events * t_ring(p.d, p);
    Ok(CostBreakdown {
        compute,
        comms,
        total: compute + comms,
        events,
    })
}

/// Fraction of wall-clock time spent computing.
pub fn utilization(method: Method, p: &CostModelParams) -> Result<f64> {
    let b = t_total(method, p)?;
    Ok(b.compute / b.total)
}

/// How many times less communication time `method` needs than `reference`.
pub fn comm_reduction(method: Method, reference: Method, p: &CostModelParams) -> Result<f64> {
    let m = t_total(method, p)?;
    let r = t_total(reference, p)?;
    Ok(r.comms / m.comms)
}
