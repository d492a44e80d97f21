//! Dense vector arithmetic shared by the optimizer kernels and the simulator.
//!
//! Every operation returns a fresh [`ParamVector`]; the dimension of a vector
//! is fixed at construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real vector holding parameters, optimizer states or gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ParamVector(vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        // Scaled accumulation keeps the norm finite for large coordinates.
        let scale = self.linf_norm();
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        let sum: f64 = self.0.iter().map(|v| (v / scale) * (v / scale)).sum();
        scale * sum.sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Applies `f` coordinate-wise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamVector {
        ParamVector(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Combines two vectors of equal dimension coordinate-wise.
    pub fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        check_same_dim(self, other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn div(&self, other: &ParamVector) -> Result<ParamVector> {
        check_same_dim(self, other)?;
        if let Some(i) = other.0.iter().position(|&b| b == 0.0) {
            return Err(Error::domain(format!("division by zero at coordinate {i}")));
        }
        self.zip_map(other, |a, b| a / b)
    }

    pub fn max(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, f64::max)
    }

    pub fn sqrt(&self) -> Result<ParamVector> {
        if let Some(i) = self.0.iter().position(|&v| v < 0.0) {
            return Err(Error::domain(format!(
                "square root of negative value at coordinate {i}"
            )));
        }
        Ok(self.map(f64::sqrt))
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        self.map(|v| v * factor)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_same_dim(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_radius(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!(
            "clipping radius must be positive and finite, got {rho}"
        )));
    }
    Ok(())
}

/// `sign(g_i) * min(|g_i|, rho)` for every coordinate.
pub fn clip_coordinatewise(g: &ParamVector, rho: f64) -> Result<ParamVector> {
    check_radius(rho)?;
    Ok(g.map(|v| v.clamp(-rho, rho)))
}

/// Rescales `g` by `min(1, rho / ||g||_2)`.
pub fn clip_by_norm(g: &ParamVector, rho: f64) -> Result<ParamVector> {
    check_radius(rho)?;
    let norm = g.l2_norm();
    if norm <= rho {
        return Ok(g.clone());
    }
    let out = g.scale(rho / norm);
    // Guard against the rescaled norm landing one ulp above rho.
    let out_norm = out.l2_norm();
    if out_norm > rho {
        Ok(out.scale(rho / out_norm * (1.0 - f64::EPSILON)))
    } else {
        Ok(out)
    }
}

/// Coordinate-wise arithmetic mean over an ordered list of worker vectors.
///
/// Sums run in ascending list order with Neumaier-compensated accumulation,
/// so the result depends only on the input order and never on threading.
/// A coordinate that is identical across all inputs is returned unchanged,
/// which makes averaging of replicas exact.
pub fn mean_across_workers<'a, I>(vs: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let vs: Vec<&ParamVector> = vs.into_iter().collect();
    let first = vs
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty list of vectors"))?;
    let dim = first.len();
    if let Some(bad) = vs.iter().find(|v| v.len() != dim) {
        return Err(Error::invalid(format!(
            "dimension mismatch in average: {} vs {}",
            dim,
            bad.len()
        )));
    }
    let count = vs.len() as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        let head = first.0[i];
        if vs.iter().all(|v| v.0[i] == head) {
            out.push(head);
            continue;
        }
        let mut sum = 0.0_f64;
        let mut comp = 0.0_f64;
        for v in &vs {
            let x = v.0[i];
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        out.push((sum + comp) / count);
    }
    Ok(ParamVector(out))
}
