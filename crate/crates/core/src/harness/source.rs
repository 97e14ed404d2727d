//! Data-space sources for the experiments.

use std::fs;

use rand::Rng;

use crate::codec::LinearCodec;
use crate::denoise::{GmmComponent, GmmPrior};
use crate::error::{Error, Result};
use crate::rng::standard_normal;

use super::config::{image_side, SourceSpec};
use super::pgm::load_pgm;

#[derive(Debug, Clone)]
pub enum Source {
    /// Independent coordinates with standard deviations `std`.
    Gaussian { std: Vec<f64> },
    /// Component `k` is `N(means[k] * 1, vars[k] I)`.
    Gmm { dim: usize, weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64> },
    /// Uniform draws from a fixed pool of image patches.
    Patches { patches: Vec<Vec<f64>> },
}

impl Source {
    pub fn from_spec(spec: &SourceSpec, data_dim: usize) -> Result<Self> {
        match spec {
            SourceSpec::Gaussian { decay } => Ok(Source::Gaussian {
                std: (0..data_dim).map(|i| decay.powi(i as i32).sqrt()).collect(),
            }),
            SourceSpec::Gmm { weights, means, vars } => Ok(Source::Gmm {
                dim: data_dim,
                weights: weights.clone(),
                means: means.clone(),
                vars: vars.clone(),
            }),
            SourceSpec::PgmDir { dir } => {
                let side = image_side(data_dim).ok_or_else(|| {
                    Error::Config(format!("data_dim {data_dim} is not a perfect square"))
                })?;
                let mut files: Vec<_> = fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
                    .collect();
                files.sort();
                let mut patches = Vec::new();
                for f in &files {
                    patches.extend(load_pgm(f)?.patches(side));
                }
                if patches.is_empty() {
                    return Err(Error::Config(format!(
                        "{} holds no PGM image with a {side}x{side} patch",
                        dir.display()
                    )));
                }
                Ok(Source::Patches { patches })
            }
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Source::Gaussian { std } => std.len(),
            Source::Gmm { dim, .. } => *dim,
            Source::Patches { patches } => patches[0].len(),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Source::Patches { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Source::Gaussian { std } => std.iter().map(|s| s * standard_normal(rng)).collect(),
            Source::Gmm { dim, weights, means, vars } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let sd = vars[k].sqrt();
                (0..*dim).map(|_| means[k] + sd * standard_normal(rng)).collect()
            }
            Source::Patches { patches } => patches[rng.random_range(0..patches.len())].clone(),
        }
    }

    /// Exact latent-space prior of a synthetic source under `codec`.
    pub fn latent_prior(&self, codec: &LinearCodec) -> Result<GmmPrior> {
        let n = codec.data_dim();
        let components = match self {
            Source::Gaussian { std } => {
                let var: Vec<f64> = std.iter().map(|s| s * s).collect();
                let (mean, var) = codec.push_forward_diagonal(&vec![0.0; n], &var)?;
                vec![GmmComponent { weight: 1.0, mean, var }]
            }
            Source::Gmm { weights, means, vars, .. } => weights
                .iter()
                .zip(means)
                .zip(vars)
                .map(|((w, m), v)| {
                    let (mean, var) = codec.push_forward_isotropic(&vec![*m; n], *v)?;
                    Ok(GmmComponent { weight: *w, mean, var })
                })
                .collect::<Result<_>>()?,
            Source::Patches { .. } => {
                return Err(Error::Config("image sources have no closed-form latent prior".into()))
            }
        };
        GmmPrior::new(components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn gmm_sample_moments() {
        let s = Source::from_spec(
            &SourceSpec::Gmm { weights: vec![0.25, 0.75], means: vec![-2.0, 2.0], vars: vec![0.5, 0.5] },
            4,
        )
        .unwrap();
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let mut mean = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = s.sample(&mut rng);
            mean += x[0];
            sq += x[0] * x[0];
        }
        mean /= n as f64;
        sq /= n as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!((sq - 4.5).abs() / 4.5 < 0.01, "{sq}");
    }

    #[test]
    fn gaussian_variances_decay() {
        let s = Source::from_spec(&SourceSpec::Gaussian { decay: 0.5 }, 3).unwrap();
        let Source::Gaussian { std } = &s else { unreachable!() };
        assert_eq!(std, &vec![1.0, 0.5f64.sqrt(), 0.5]);
    }
}
