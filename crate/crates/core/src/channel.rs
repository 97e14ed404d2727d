//! Real-valued AWGN channel on latent vectors: `y = z + n`, `n ~ N(0, sigma2 I)`.

use rand::Rng;

use crate::adapt::ChannelSpec;
use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::rng::standard_normal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub sigma2: f64,
}

impl SnrPoint {
    pub fn from_db(snr_db: f64, gamma: f64) -> Result<Self> {
        Ok(SnrPoint {
            snr_db,
            sigma2: snr_db_to_sigma2(snr_db, gamma)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelObservation {
    pub y: LatentVector,
    /// Noise variance actually used and the measured received energy.
    /// `gamma` is filled with the measured signal energy of the transmitted
    /// vector(s); receivers substitute the training-corpus energy.
    pub spec: ChannelSpec,
}

pub fn snr_db_to_sigma2(snr_db: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("source energy must be positive, got {gamma}")));
    }
    Ok(gamma / 10f64.powf(snr_db / 10.0))
}

pub fn sigma2_to_snr_db(sigma2: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "energies must be positive, got gamma = {gamma}, sigma2 = {sigma2}"
        )));
    }
    Ok(10.0 * (gamma / sigma2).log10())
}

fn add_noise<R: Rng + ?Sized>(z: &LatentVector, sigma: f64, rng: &mut R) -> LatentVector {
    z.iter()
        .map(|v| v + sigma * standard_normal(rng))
        .collect::<Vec<_>>()
        .into()
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!(
            "noise variance must be positive and finite, got {sigma2}"
        )));
    }
    Ok(())
}

fn observed_spec(z_energy: f64, sigma2: f64, y_energy: f64) -> Result<ChannelSpec> {
    // A zero transmitted vector has no meaningful gamma; keep the ChannelSpec valid.
    ChannelSpec::new(z_energy.max(f64::MIN_POSITIVE), sigma2, y_energy)
}

/// Sends one latent vector through the channel; the recorded `y_energy` is
/// the per-dimension energy of this single realization.
pub fn transmit<R: Rng + ?Sized>(
    z: &LatentVector,
    sigma2: f64,
    rng: &mut R,
) -> Result<ChannelObservation> {
    check_sigma2(sigma2)?;
    z.ensure_finite("z")?;
    let y = add_noise(z, sigma2.sqrt(), rng);
    let spec = observed_spec(z.energy(), sigma2, y.energy())?;
    Ok(ChannelObservation { y, spec })
}

/// Sends a batch; every observation carries the energy measured over the
/// whole batch, which is what the receiver needs for a stable `phi`.
pub fn transmit_batch<R: Rng + ?Sized>(
    zs: &[LatentVector],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<ChannelObservation>> {
    check_sigma2(sigma2)?;
    let sigma = sigma2.sqrt();
    let mut ys = Vec::with_capacity(zs.len());
    for z in zs {
        z.ensure_finite("z")?;
        ys.push(add_noise(z, sigma, rng));
    }
    let y_energy = measure_energy(&ys)?;
    let z_energy = measure_energy(zs)?;
    let spec = observed_spec(z_energy, sigma2, y_energy)?;
    Ok(ys
        .into_iter()
        .map(|y| ChannelObservation { y, spec })
        .collect())
}

/// Empirical per-dimension energy `sum ||y||^2 / (N d)`.
pub fn measure_energy(batch: &[LatentVector]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = batch[0].dim();
    let mut total = 0.0;
    for v in batch {
        crate::error::check_dim(dim, v.dim())?;
        total += v.squared_norm();
    }
    let count = (batch.len() * dim) as f64;
    Ok(if count == 0.0 { 0.0 } else { total / count })
}
