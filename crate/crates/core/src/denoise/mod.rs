//! Noise predictors and the receiver that drives them.
//!
//! A [`NoisePredictor`] maps `(x_t, t)` to an estimate of the unit-variance
//! noise in `x_t`. Two analytic oracles (diagonal Gaussian and diagonal
//! Gaussian-mixture priors) give exact MMSE predictions; [`MlpPredictor`] is
//! a small trainable network for the same job.

mod mlp;
mod oracle;
mod receiver;

pub use mlp::{
    mlp_gradient, mlp_train, sample_example, time_embedding, Gradients, Layer, MlpConfig,
    MlpPredictor, TrainedMlp,
    TrainingExample, TIME_EMBED_WIDTH,
};
pub use oracle::{GaussianPrior, GmmComponent, GmmPrior};
pub use receiver::{denoise_with_params, receive_and_denoise, receive_and_denoise_with};

use crate::error::Result;
use crate::latent::LatentVector;
use crate::schedule::Timestep;

pub trait NoisePredictor: Send + Sync {
    /// Estimate of the unit-variance noise in `x_t`. Must be deterministic
    /// and return a vector of the same dimension as `x_t`.
    fn predict(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        (**self).predict(x_t, t)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        (**self).predict(x_t, t)
    }
}
