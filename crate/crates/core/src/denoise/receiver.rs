//! End-to-end receiver: pick `(t*, alpha)` from the channel statistics,
//! rescale the received latent, and run the reverse chain from `t*`.

use rand::Rng;

use crate::adapt::{receiver_params_with, ChannelSpec, PhiPolicy, ReceiverParams};
use crate::channel::ChannelObservation;
use crate::error::Result;
use crate::latent::LatentVector;
use crate::schedule::reverse_chain;

use super::NoisePredictor;

/// Denoises `y` with explicit receiver parameters. The harness uses this
/// directly for perturbed `(t, alpha)` pairs.
pub fn denoise_with_params<P, R>(
    y: &LatentVector,
    params: &ReceiverParams,
    predictor: &P,
    num_steps: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<LatentVector>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let x_start = y.scaled(params.alpha);
    reverse_chain(&x_start, params.t_star, num_steps, predictor, stochastic, rng)
}

/// `gamma` is the clean-latent energy the predictor was trained on; the
/// noise variance and received energy come from the observation.
pub fn receive_and_denoise<P, R>(
    obs: &ChannelObservation,
    gamma: f64,
    predictor: &P,
    num_steps: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<LatentVector>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    receive_and_denoise_with(obs, gamma, predictor, num_steps, stochastic, PhiPolicy::Strict, rng)
        .map(|(z, _)| z)
}

pub fn receive_and_denoise_with<P, R>(
    obs: &ChannelObservation,
    gamma: f64,
    predictor: &P,
    num_steps: usize,
    stochastic: bool,
    policy: PhiPolicy,
    rng: &mut R,
) -> Result<(LatentVector, ReceiverParams)>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let spec = ChannelSpec::new(gamma, obs.spec.sigma2, obs.spec.y_energy)?;
    let params = receiver_params_with(&spec, policy)?;
    let z_hat = denoise_with_params(&obs.y, &params, predictor, num_steps, stochastic, rng)?;
    Ok((z_hat, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{transmit, transmit_batch};
    use crate::denoise::GaussianPrior;
    use crate::error::Error;
    use crate::rng::{rng_from_seed, standard_normal_vector};

    #[test]
    fn clean_channel_passes_through() {
        let mut rng = rng_from_seed(40);
        let prior = GaussianPrior::standard(16);
        let z = standard_normal_vector(16, &mut rng);
        let mut obs = transmit(&z, 1e-12, &mut rng).unwrap();
        obs.spec.y_energy = 1.0 + 1e-12;
        let (z_hat, params) =
            receive_and_denoise_with(&obs, 1.0, &prior, 1, false, PhiPolicy::Strict, &mut rng).unwrap();
        assert!(params.t_star.get() < 1e-9);
        assert!((params.alpha - 1.0).abs() < 1e-9);
        let dev = z_hat.iter().zip(z.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-4, "{dev}");
    }

    #[test]
    fn noise_floor_violation_surfaces() {
        let mut rng = rng_from_seed(41);
        let prior = GaussianPrior::standard(2);
        let zs = vec![LatentVector::zeros(2); 4];
        let mut obs = transmit_batch(&zs, 1.0, &mut rng).unwrap().remove(0);
        obs.spec.y_energy = 0.5;
        let err = receive_and_denoise(&obs, 1.0, &prior, 1, false, &mut rng);
        assert!(matches!(err, Err(Error::NegativeEnergy { .. })));
    }

    #[test]
    fn matched_receiver_attains_posterior_variance() {
        let mut rng = rng_from_seed(42);
        let d = 16;
        let trials = 20_000;
        let prior = GaussianPrior::standard(d);
        let zs: Vec<_> = (0..trials).map(|_| standard_normal_vector(d, &mut rng)).collect();
        let obs = transmit_batch(&zs, 1.0, &mut rng).unwrap();
        let mut mse = 0.0;
        let mut raw = 0.0;
        for (o, z) in obs.iter().zip(&zs) {
            let z_hat = receive_and_denoise(o, 1.0, &prior, 1, false, &mut rng).unwrap();
            mse += z_hat.mse(z).unwrap() / trials as f64;
            raw += o.y.mse(z).unwrap() / trials as f64;
        }
        assert!((mse - 0.5).abs() < 0.02, "{mse}");
        assert!(mse < raw);
    }
}
