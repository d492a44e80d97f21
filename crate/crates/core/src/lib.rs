//! Deterministic multi-worker simulation of desynchronized low-communication
//! optimizers (DES-LOC) and their baselines.
//!
//! Parameters and each optimizer state get their own synchronization policy;
//! the simulator runs the training loop over analytic noisy objectives and
//! records drift, rate-of-change and payload metrics. [`costmodel`] estimates
//! wall-clock and communication time at scale.

pub mod costmodel;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod sim;
pub mod sync;
pub mod vecmath;

pub use error::{Error, Result};
pub use vecmath::ParamVector;
