//! SNR-adaptive diffusion denoising receiver for latent-space semantic
//! communication over AWGN channels.
//!
//! The receiver maps a noisy latent `y = z + n` onto the diffusion forward
//! trajectory `x_t = (1 - t) x0 + sqrt(t) eps` by picking a timestep `t*`
//! and a scale `alpha` from the channel statistics, then runs a denoiser
//! from `t*` back to zero.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod channel;
pub mod codec;
pub mod denoise;
pub mod error;
pub mod harness;
pub mod image;
pub mod latent;
pub mod metrics;
pub mod rng;
pub mod schedule;

pub use adapt::{
    compute_phi, receiver_params, receiver_params_with, scaling_factor, timestep_for_phi,
    timestep_simplified, ChannelSpec, PhiPolicy, ReceiverParams,
};
pub use channel::{measure_energy, transmit, transmit_batch, ChannelObservation, SnrPoint};
pub use codec::LinearCodec;
pub use denoise::{
    receive_and_denoise, GaussianPrior, GmmPrior, MlpConfig, MlpPredictor, NoisePredictor,
};
pub use error::{Error, Result};
pub use image::GrayImage;
pub use latent::LatentVector;
pub use metrics::MetricsReport;
pub use schedule::{forward_corrupt, reverse_chain, reverse_step, ReverseStepPlan, Timestep};
