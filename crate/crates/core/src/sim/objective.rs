//! Analytic test objectives with exact gradients and seeded Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain, Stream};
use crate::vecmath::{mean_across_workers, ParamVector};

/// Deterministic part of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Function {
    /// `(1 - x1)^2 + 100 (x2 - x1^2)^2`, minimum at `(1, 1)`.
    Rosenbrock,
    /// `0.5 * sum_i c_i (x_i - center_i)^2`.
    Quadratic { center: Vec<f64>, curvature: Vec<f64> },
    /// Quadratic whose center is shifted per worker by `spread * N(0, 1)`
    /// per coordinate. The global objective is the average over workers.
    HeterogeneousQuadratic {
        center: Vec<f64>,
        curvature: Vec<f64>,
        spread: f64,
    },
}

/// Additive gradient noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    /// Every worker uses standard deviation `sigma`.
    IidGaussian { sigma: f64 },
    /// Worker `m` uses `sigma_m = |N(0, scale)|`, drawn once from the run seed.
    PerWorkerGaussian { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub function: Function,
    pub noise: NoiseModel,
    /// Shared starting point; defaults to `(-1.2, 1.0)` for Rosenbrock and
    /// the origin for quadratics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

impl Objective {
    pub fn rosenbrock(noise: NoiseModel) -> Self {
        Objective {
            function: Function::Rosenbrock,
            noise,
            start: None,
        }
    }

    pub fn quadratic(center: Vec<f64>, curvature: Vec<f64>, noise: NoiseModel) -> Self {
        Objective {
            function: Function::Quadratic { center, curvature },
            noise,
            start: None,
        }
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }

    pub fn dimension(&self) -> usize {
        match &self.function {
            Function::Rosenbrock => 2,
            Function::Quadratic { center, .. } | Function::HeterogeneousQuadratic { center, .. } => {
                center.len()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.function {
            Function::Rosenbrock => {}
            Function::Quadratic { center, curvature }
            | Function::HeterogeneousQuadratic {
                center, curvature, ..
            } => {
                if center.is_empty() {
                    return Err(Error::config("objective.function.center", "must not be empty"));
                }
                if curvature.len() != center.len() {
                    return Err(Error::config(
                        "objective.function.curvature",
                        "must have the same length as center",
                    ));
                }
                if curvature.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
                    return Err(Error::config(
                        "objective.function.curvature",
                        "entries must be positive",
                    ));
                }
            }
        }
        if let Function::HeterogeneousQuadratic { spread, .. } = &self.function {
            if !(*spread >= 0.0) {
                return Err(Error::config("objective.function.spread", "must be non-negative"));
            }
        }
        let noise_ok = match self.noise {
            NoiseModel::None => true,
            NoiseModel::IidGaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseModel::PerWorkerGaussian { scale } => scale >= 0.0 && scale.is_finite(),
        };
        if !noise_ok {
            return Err(Error::config("objective.noise", "noise scale must be non-negative"));
        }
        if let Some(start) = &self.start {
            if start.len() != self.dimension() {
                return Err(Error::config(
                    "objective.start",
                    format!("expected {} coordinates, got {}", self.dimension(), start.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn start_point(&self) -> ParamVector {
        match (&self.start, &self.function) {
            (Some(s), _) => ParamVector::new(s.clone()),
            (None, Function::Rosenbrock) => ParamVector::new(vec![-1.2, 1.0]),
            (None, _) => ParamVector::zeros(self.dimension()),
        }
    }

    /// Worker `id`'s view of the objective. Pure in `(seed, id)`.
    pub fn local(&self, seed: u64, id: usize) -> LocalObjective {
        let mut setup = rng::stream(seed, Domain::WorkerSetup, id as u64);
        let sigma = match self.noise {
            NoiseModel::None => 0.0,
            NoiseModel::IidGaussian { sigma } => sigma,
            NoiseModel::PerWorkerGaussian { scale } => {
                let draw: f64 = setup.sample(StandardNormal);
                (draw * scale).abs()
            }
        };
        let shape = match &self.function {
            Function::Rosenbrock => Shape::Rosenbrock,
            Function::Quadratic { center, curvature } => Shape::Quadratic {
                center: center.clone(),
                curvature: curvature.clone(),
            },
            Function::HeterogeneousQuadratic {
                center,
                curvature,
                spread,
            } => {
                let shift = Normal::new(0.0, *spread).expect("validated spread");
                Shape::Quadratic {
                    center: center.iter().map(|c| c + shift.sample(&mut setup)).collect(),
                    curvature: curvature.clone(),
                }
            }
        };
        LocalObjective { shape, sigma }
    }

    /// Minimizer of the average objective over the given workers, when known.
    pub fn optimum(&self, locals: &[&LocalObjective]) -> Option<ParamVector> {
        match &self.function {
            Function::Rosenbrock => Some(ParamVector::new(vec![1.0, 1.0])),
            Function::Quadratic { center, .. } => Some(ParamVector::new(center.clone())),
            Function::HeterogeneousQuadratic { .. } => {
                // Equal curvature across workers: the optimum is the mean center.
                let centers: Vec<ParamVector> = locals
                    .iter()
                    .filter_map(|l| match &l.shape {
                        Shape::Quadratic { center, .. } => Some(ParamVector::new(center.clone())),
                        Shape::Rosenbrock => None,
                    })
                    .collect();
                mean_across_workers(&centers).ok()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Rosenbrock,
    Quadratic { center: Vec<f64>, curvature: Vec<f64> },
}

/// One worker's local loss `f_m` and its noise level `sigma_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalObjective {
    shape: Shape,
    sigma: f64,
}

impl LocalObjective {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn center(&self) -> Option<&[f64]> {
        match &self.shape {
            Shape::Quadratic { center, .. } => Some(center),
            Shape::Rosenbrock => None,
        }
    }

    pub fn loss(&self, x: &ParamVector) -> f64 {
        match &self.shape {
            Shape::Rosenbrock => {
                let (a, b) = (x[0], x[1]);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            }
            Shape::Quadratic { center, curvature } => {
                0.5 * x
                    .iter()
                    .zip(center)
                    .zip(curvature)
                    .map(|((xi, ci), ki)| ki * (xi - ci) * (xi - ci))
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, x: &ParamVector) -> ParamVector {
        match &self.shape {
            Shape::Rosenbrock => {
                let (a, b) = (x[0], x[1]);
                ParamVector::new(vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ])
            }
            Shape::Quadratic { center, curvature } => ParamVector::new(
                x.iter()
                    .zip(center)
                    .zip(curvature)
                    .map(|((xi, ci), ki)| ki * (xi - ci))
                    .collect(),
            ),
        }
    }

    /// Exact gradient plus `sigma * N(0, I)` drawn from `noise`.
    ///
    /// One normal draw per coordinate is consumed even when `sigma == 0`.
    pub fn stochastic_gradient(&self, x: &ParamVector, noise: &mut Stream) -> ParamVector {
        let exact = self.gradient(x);
        ParamVector::new(
            exact
                .iter()
                .map(|g| g + self.sigma * noise.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }
}
