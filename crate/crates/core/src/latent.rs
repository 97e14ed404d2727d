use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A real vector living in the codec's latent space.
///
/// Used for every role the receiver deals with: the clean latent `z`, the
/// diffusion variable `x_t`, the channel output `y`, and noise realizations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Self {
        LatentVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        LatentVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidInput(format!(
                "{what} component {i} is not finite ({})",
                self.0[i]
            ))),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Mean squared value per component.
    pub fn energy(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.squared_norm() / self.0.len() as f64
        }
    }

    pub fn scaled(&self, factor: f64) -> LatentVector {
        LatentVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// Per-component mean squared distance to `other`.
    pub fn mse(&self, other: &LatentVector) -> Result<f64> {
        crate::error::check_dim(self.dim(), other.dim())?;
        if self.0.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.0.len() as f64)
    }
}

impl Deref for LatentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for LatentVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for LatentVector {
    fn from(values: Vec<f64>) -> Self {
        LatentVector(values)
    }
}

impl From<&[f64]> for LatentVector {
    fn from(values: &[f64]) -> Self {
        LatentVector(values.to_vec())
    }
}
