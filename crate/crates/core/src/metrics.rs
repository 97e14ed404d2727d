//! Reconstruction quality in data space (RMSE, PSNR, SSIM) and moment
//! diagnostics in latent space.

use crate::error::{check_dim, Error, Result};
use crate::image::GrayImage;
use crate::latent::LatentVector;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_DEFAULT_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub latent_mse: f64,
}

fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    mse(a, b).map(f64::sqrt)
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    psnr_from_mse(m, peak)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Domain(format!("peak must be positive, got {peak}")));
    }
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over every `window x window` box (stride 1, valid region only).
pub fn ssim(a: &GrayImage, b: &GrayImage, window: usize, peak: f64) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidInput(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if window == 0 || a.width() < window || a.height() < window {
        return Err(Error::InvalidInput(format!(
            "{}x{} image is smaller than the {window}x{window} window",
            a.width(),
            a.height()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Domain(format!("peak must be positive, got {peak}")));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(a.height() - window) {
        for x0 in 0..=(a.width() - window) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    let (p, q) = (a.get(x, y), b.get(x, y));
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let var_a = saa / n - ma * ma;
            let var_b = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentDiagnostics {
    pub per_dim_energy: Vec<f64>,
    pub per_dim_mean: Vec<f64>,
    /// Energy pooled over all dimensions.
    pub energy: f64,
    pub mean: f64,
}

pub fn moment_diagnostics(batch: &[LatentVector]) -> Result<MomentDiagnostics> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let d = first.dim();
    let n = batch.len() as f64;
    let mut energy = vec![0.0; d];
    let mut mean = vec![0.0; d];
    for v in batch {
        check_dim(d, v.dim())?;
        for i in 0..d {
            energy[i] += v[i] * v[i] / n;
            mean[i] += v[i] / n;
        }
    }
    let pooled = |xs: &[f64]| if d == 0 { 0.0 } else { xs.iter().sum::<f64>() / d as f64 };
    Ok(MomentDiagnostics {
        energy: pooled(&energy),
        mean: pooled(&mean),
        per_dim_energy: energy,
        per_dim_mean: mean,
    })
}
