//! Experiment files: the simulator configuration plus output options and an
//! optional cost-model block, stored as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use desloc::costmodel::CostModelParams;
use desloc::metrics::MetricsOptions;
use desloc::optim::OptimizerSpec;
use desloc::sim::{LrSchedule, MembershipEvent, Objective, SimConfig};
use desloc::sync::SyncPolicies;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn default_record_every() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    #[serde(default)]
    pub format: Format,
    /// Destination file; rows go to standard output when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions {
            format: Format::Csv,
            path: None,
            record_every: 1,
        }
    }
}

fn default_threads() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workers: usize,
    pub steps: u64,
    pub optimizer: OptimizerSpec,
    pub schedule: LrSchedule,
    pub sync: SyncPolicies,
    pub objective: Objective,
    #[serde(default)]
    pub events: Vec<MembershipEvent>,
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub metrics: MetricsOptions,
    #[serde(default)]
    pub output: OutputOptions,
    #[serde(default)]
    pub cost_model: Option<CostModelParams>,
}

impl ExperimentConfig {
    /// Parses and validates a config, reporting the offending key path on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| desloc::Error::InvalidConfig {
                path: e.path().to_string(),
                message: e.into_inner().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        if let Some(cost) = &self.cost_model {
            cost.validate()?;
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            workers: self.workers,
            steps: self.steps,
            optimizer: self.optimizer,
            schedule: self.schedule,
            sync: self.sync.clone(),
            objective: self.objective.clone(),
            events: self.events.clone(),
            seed: self.seed,
            record_every: self.output.record_every,
            threads: self.threads,
            metrics: self.metrics,
        }
    }
}
