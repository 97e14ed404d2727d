//! Closed-form MMSE noise predictors for diagonal Gaussian and Gaussian
//! mixture priors under `x_t = (1 - t) x_0 + sqrt(t) eps`.

use crate::error::{check_dim, Error, Result};
use crate::latent::LatentVector;
use crate::schedule::Timestep;

use super::NoisePredictor;

fn check_open_timestep(t: Timestep) -> Result<f64> {
    let t = t.get();
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("oracle needs 0 < t < 1, got {t}")));
    }
    Ok(t)
}

/// Posterior mean of `x_0` for one diagonal-Gaussian component.
fn component_posterior_mean(mean: &[f64], var: &[f64], x_t: &[f64], t: f64, out: &mut [f64]) {
    let a = 1.0 - t;
    for i in 0..x_t.len() {
        let v = a * a * var[i] + t;
        out[i] = mean[i] + a * var[i] * (x_t[i] - a * mean[i]) / v;
    }
}

fn eps_from_x0(x_t: &[f64], x0: &[f64], t: f64) -> LatentVector {
    let a = 1.0 - t;
    let s = t.sqrt();
    x_t.iter()
        .zip(x0)
        .map(|(x, m)| (x - a * m) / s)
        .collect::<Vec<_>>()
        .into()
}

fn validate_moments(mean: &[f64], var: &[f64]) -> Result<()> {
    check_dim(mean.len(), var.len())?;
    if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("prior variance must be positive, got {v}")));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::Domain("prior mean must be finite".into()));
    }
    Ok(())
}

/// Diagonal Gaussian prior `N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        validate_moments(&mean, &var)?;
        Ok(GaussianPrior { mean, var })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianPrior {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Moment-matched prior from a batch of latents.
    pub fn fit(samples: &[LatentVector]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let d = samples[0].dim();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            check_dim(d, s.dim())?;
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m) * (v - m) / n;
            }
        }
        for v in &mut var {
            *v = v.max(1e-12);
        }
        Self::new(mean, var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn posterior_mean(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        check_dim(self.dim(), x_t.dim())?;
        let t = check_open_timestep(t)?;
        let mut out = vec![0.0; x_t.dim()];
        component_posterior_mean(&self.mean, &self.var, x_t, t, &mut out);
        Ok(out.into())
    }

    /// Per-dimension posterior variance of `x_0` given `x_t`.
    pub fn posterior_variance(&self, t: Timestep) -> Result<Vec<f64>> {
        let t = check_open_timestep(t)?;
        let a = 1.0 - t;
        Ok(self.var.iter().map(|s2| s2 * t / (a * a * s2 + t)).collect())
    }
}

impl NoisePredictor for GaussianPrior {
    fn predict(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        let x0 = self.posterior_mean(x_t, t)?;
        Ok(eps_from_x0(x_t, &x0, t.get()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Domain("mixture needs at least one component".into()))?;
        let d = first.mean.len();
        let mut total = 0.0;
        for c in &components {
            check_dim(d, c.mean.len())?;
            validate_moments(&c.mean, &c.var)?;
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::Domain(format!("mixture weight {} is invalid", c.weight)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(GmmPrior { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Posterior component probabilities given `x_t`.
    pub fn responsibilities(&self, x_t: &LatentVector, t: Timestep) -> Result<Vec<f64>> {
        check_dim(self.dim(), x_t.dim())?;
        let t = check_open_timestep(t)?;
        let a = 1.0 - t;
        let log_r: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                if c.weight == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut ll = c.weight.ln();
                for i in 0..x_t.dim() {
                    let v = a * a * c.var[i] + t;
                    let r = x_t[i] - a * c.mean[i];
                    ll -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
                }
                ll
            })
            .collect();
        let max = log_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical(
                "all mixture responsibilities underflowed".into(),
            ));
        }
        let unnorm: Vec<f64> = log_r.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        Ok(unnorm.into_iter().map(|u| u / z).collect())
    }

    pub fn posterior_mean(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        let resp = self.responsibilities(x_t, t)?;
        let t = t.get();
        let d = x_t.dim();
        let mut out = vec![0.0; d];
        let mut comp = vec![0.0; d];
        for (c, r) in self.components.iter().zip(&resp) {
            if *r == 0.0 {
                continue;
            }
            component_posterior_mean(&c.mean, &c.var, x_t, t, &mut comp);
            for (o, v) in out.iter_mut().zip(&comp) {
                *o += r * v;
            }
        }
        Ok(out.into())
    }
}

impl NoisePredictor for GmmPrior {
    fn predict(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        let x0 = self.posterior_mean(x_t, t)?;
        Ok(eps_from_x0(x_t, &x0, t.get()))
    }
}
