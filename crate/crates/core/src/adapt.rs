//! Closed-form receiver adaptation.
//!
//! Given the channel statistics, pick the diffusion timestep whose
//! signal-to-noise ratio matches the received vector's,
//! `(1 - t)^2 = phi * t`, and the scalar gain `alpha` that equalizes the
//! received energy with the energy of `x_t` at that timestep.
//!
//! All energies are per-dimension second moments (total energy / d).

use crate::error::{Error, Result};
use crate::schedule::Timestep;

/// Channel statistics that drive the timestep and scaling choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// Per-dimension noise variance.
    pub sigma2: f64,
    /// Per-dimension clean-latent energy the denoiser was trained on.
    pub gamma: f64,
    /// Per-dimension measured energy of the received vectors.
    pub y_energy: f64,
}

impl ChannelSpec {
    pub fn new(gamma: f64, sigma2: f64, y_energy: f64) -> Result<Self> {
        let spec = ChannelSpec {
            sigma2,
            gamma,
            y_energy,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec whose received energy is exactly `gamma + sigma2`.
    pub fn consistent(gamma: f64, sigma2: f64) -> Result<Self> {
        Self::new(gamma, sigma2, gamma + sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "noise variance must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Domain(format!(
                "source energy must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !(self.y_energy >= 0.0) || !self.y_energy.is_finite() {
            return Err(Error::Domain(format!(
                "received energy must be non-negative and finite, got {}",
                self.y_energy
            )));
        }
        Ok(())
    }

    pub fn is_self_consistent(&self) -> bool {
        let target = self.gamma + self.sigma2;
        (self.y_energy - target).abs() <= 1e-12 * target.max(1.0)
    }
}

/// What to do when the measured received energy falls below the noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiPolicy {
    /// Report [`Error::NegativeEnergy`].
    #[default]
    Strict,
    /// Treat the observation as carrying no signal (`phi = 0`, `t = 1`).
    ClampToZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverParams {
    pub t_star: Timestep,
    pub alpha: f64,
    pub phi: f64,
}

/// `phi = (y_energy - sigma2) / (gamma * sigma2)`.
pub fn compute_phi(spec: &ChannelSpec) -> Result<f64> {
    compute_phi_with(spec, PhiPolicy::Strict)
}

pub fn compute_phi_with(spec: &ChannelSpec, policy: PhiPolicy) -> Result<f64> {
    spec.validate()?;
    let signal = spec.y_energy - spec.sigma2;
    if signal < 0.0 {
        return match policy {
            PhiPolicy::Strict => Err(Error::NegativeEnergy {
                y_energy: spec.y_energy,
                sigma2: spec.sigma2,
            }),
            PhiPolicy::ClampToZero => Ok(0.0),
        };
    }
    Ok(signal / (spec.gamma * spec.sigma2))
}

/// Root of `t^2 - (2 + phi) t + 1 = 0` in `(0, 1]`.
///
/// Evaluated as `2 / (2 + phi + sqrt(phi (phi + 4)))`, the rationalized form
/// of `(2 + phi - sqrt(phi^2 + 4 phi)) / 2`, which does not cancel for large
/// `phi`.
pub fn timestep_for_phi(phi: f64) -> Result<Timestep> {
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::Domain(format!(
            "phi must be finite and non-negative, got {phi}"
        )));
    }
    let root = phi.sqrt() * (phi + 4.0).sqrt();
    Timestep::new(2.0 / (2.0 + phi + root))
}

/// Timestep under unit source energy, as a function of the noise variance only:
/// `(2 sigma2 + 1 - sqrt(1 + 4 sigma2)) / (2 sigma2)`.
///
/// Computed in the equivalent form `2 sigma2 / (2 sigma2 + 1 + sqrt(1 + 4 sigma2))`
/// to avoid cancellation when `sigma2` is small.
pub fn timestep_simplified(sigma2: f64) -> Result<Timestep> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!(
            "noise variance must be positive and finite, got {sigma2}"
        )));
    }
    let two_s = 2.0 * sigma2;
    Timestep::new(two_s / (two_s + 1.0 + (1.0 + 4.0 * sigma2).sqrt()))
}

/// `alpha = sqrt(((1 - t)^2 gamma + t) / (gamma + sigma2))`.
pub fn scaling_factor(spec: &ChannelSpec, t: Timestep) -> Result<f64> {
    spec.validate()?;
    let t = t.get();
    let target = (1.0 - t).powi(2) * spec.gamma + t;
    Ok((target / (spec.gamma + spec.sigma2)).sqrt())
}

pub fn receiver_params(spec: &ChannelSpec) -> Result<ReceiverParams> {
    receiver_params_with(spec, PhiPolicy::Strict)
}

pub fn receiver_params_with(spec: &ChannelSpec, policy: PhiPolicy) -> Result<ReceiverParams> {
    let phi = compute_phi_with(spec, policy)?;
    let t_star = timestep_for_phi(phi)?;
    let alpha = scaling_factor(spec, t_star)?;
    if spec.is_self_consistent() {
        let gap = (alpha - (1.0 - t_star.get())).abs();
        if gap > 1e-9 {
            return Err(Error::Numerical(format!(
                "matched scaling factor {alpha} deviates from 1 - t* by {gap}"
            )));
        }
    }
    Ok(ReceiverParams { t_star, alpha, phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent root finder for `(1 - t)^2 - phi t` on `[0, 1]`.
    fn bisect(phi: f64) -> f64 {
        let g = |t: f64| (1.0 - t).powi(2) - phi * t;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn phi_examples() {
        assert_eq!(compute_phi(&ChannelSpec::new(1.0, 1.0, 2.0).unwrap()).unwrap(), 1.0);
        assert_eq!(compute_phi(&ChannelSpec::new(1.0, 0.25, 1.25).unwrap()).unwrap(), 4.0);
        assert_eq!(compute_phi(&ChannelSpec::new(1.0, 0.5, 0.5).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn phi_below_noise_floor() {
        let spec = ChannelSpec::new(1.0, 1.0, 0.8).unwrap();
        assert!(matches!(compute_phi(&spec), Err(Error::NegativeEnergy { .. })));
        assert_eq!(compute_phi_with(&spec, PhiPolicy::ClampToZero).unwrap(), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(ChannelSpec::new(1.0, 0.0, 1.0).is_err());
        assert!(ChannelSpec::new(0.0, 1.0, 1.0).is_err());
        assert!(ChannelSpec::new(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn timestep_examples() {
        let golden = (3.0 - 5f64.sqrt()) / 2.0;
        let t = timestep_for_phi(1.0).unwrap().get();
        assert!((t - golden).abs() < 1e-15);
        assert!((t - 0.3819660113).abs() < 1e-10);
        assert!((t - bisect(1.0)).abs() < 1e-12);

        let t = timestep_for_phi(4.0).unwrap().get();
        assert!((t - (3.0 - 2.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!((t - bisect(4.0)).abs() < 1e-12);

        assert_eq!(timestep_for_phi(0.0).unwrap().get(), 1.0);
        assert!(timestep_for_phi(-1e-3).is_err());
        assert!(timestep_for_phi(f64::NAN).is_err());
    }

    #[test]
    fn simplified_examples() {
        let t = timestep_simplified(1.0).unwrap().get();
        assert!((t - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((t - timestep_for_phi(1.0).unwrap().get()).abs() < 1e-15);

        let t = timestep_simplified(0.25).unwrap().get();
        assert!((t - (1.5 - 2f64.sqrt()) / 0.5).abs() < 1e-14);

        assert!(timestep_simplified(1e-14).unwrap().get() < 1e-13);
        assert!(timestep_simplified(0.0).is_err());
        assert!(timestep_simplified(-1.0).is_err());
    }

    #[test]
    fn scaling_examples() {
        let spec = ChannelSpec::consistent(1.0, 1.0).unwrap();
        let t = timestep_for_phi(1.0).unwrap();
        let alpha = scaling_factor(&spec, t).unwrap();
        assert!((alpha - 0.6180339887).abs() < 1e-10);
        assert!((alpha * alpha - t.get()).abs() < 1e-12);

        let alpha = scaling_factor(&spec, Timestep::new(0.5).unwrap()).unwrap();
        assert!((alpha - 0.375f64.sqrt()).abs() < 1e-15);
        assert!((alpha - 0.6123724357).abs() < 1e-10);

        let clean = ChannelSpec::consistent(1.0, 1e-12).unwrap();
        let alpha = scaling_factor(&clean, Timestep::zero()).unwrap();
        assert!((alpha - 1.0).abs() < 1e-11);
    }

    #[test]
    fn receiver_params_examples() {
        let p = receiver_params(&ChannelSpec::new(1.0, 1.0, 2.0).unwrap()).unwrap();
        assert!((p.t_star.get() - 0.381966).abs() < 1e-6);
        assert!((p.alpha - 0.618034).abs() < 1e-6);

        let p = receiver_params(&ChannelSpec::new(1.0, 4.0, 5.0).unwrap()).unwrap();
        assert_eq!(p.phi, 0.25);
        let expected = (2.25 - 1.0625f64.sqrt()) / 2.0;
        assert!((p.t_star.get() - expected).abs() < 1e-14);
        assert!((p.t_star.get() - 0.6096118).abs() < 1e-7);
        assert!((p.alpha - (1.0 - expected)).abs() < 1e-9);
        let t = p.t_star.get();
        assert!(((1.0 - t).powi(2) - 0.25 * t).abs() < 1e-12);

        let p = receiver_params(&ChannelSpec::consistent(1.0, 1e9).unwrap()).unwrap();
        assert!(p.t_star.get() > 1.0 - 1e-4);
        assert!(p.alpha < 1e-4);
    }

    #[test]
    fn residual_and_bisection_over_log_grid() {
        for i in 0..1000 {
            let phi = 10f64.powf(-6.0 + 12.0 * i as f64 / 999.0);
            let t = timestep_for_phi(phi).unwrap().get();
            assert!(((1.0 - t).powi(2) - phi * t).abs() <= 1e-12, "phi={phi}");
            assert!((t - bisect(phi)).abs() <= 1e-12, "phi={phi}");
        }
    }

    #[test]
    fn monotone_and_limits() {
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let phi = 10f64.powf(-9.0 + 21.0 * i as f64 / 999.0);
            let t = timestep_for_phi(phi).unwrap().get();
            assert!(t < prev);
            prev = t;
        }
        assert!(timestep_for_phi(1e-9).unwrap().get() > 1.0 - 1e-4);
        assert!(timestep_for_phi(1e12).unwrap().get() < 1e-6);
    }

    proptest! {
        #[test]
        fn moment_identity(gamma in 1e-3f64..1e3, sigma2 in 1e-3f64..1e3, t in 0.0f64..=1.0) {
            let spec = ChannelSpec::consistent(gamma, sigma2).unwrap();
            let alpha = scaling_factor(&spec, Timestep::new(t).unwrap()).unwrap();
            let lhs = alpha * alpha * (gamma + sigma2);
            let rhs = (1.0 - t).powi(2) * gamma + t;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn matched_corollary(gamma in 1e-2f64..1e2, sigma2 in 1e-3f64..1e3) {
            let spec = ChannelSpec::consistent(gamma, sigma2).unwrap();
            let p = receiver_params(&spec).unwrap();
            let t = p.t_star.get();
            prop_assert!((p.alpha - (1.0 - t)).abs() <= 1e-9);
            prop_assert!((p.alpha * p.alpha * sigma2 - t).abs() <= 1e-9);
        }

        #[test]
        fn alpha_bounded_for_unit_or_larger_gamma(gamma in 1.0f64..1e3, sigma2 in 1e-3f64..1e3, t in 0.0f64..=1.0) {
            let spec = ChannelSpec::consistent(gamma, sigma2).unwrap();
            let alpha = scaling_factor(&spec, Timestep::new(t).unwrap()).unwrap();
            prop_assert!(alpha > 0.0 && alpha <= 1.0);
        }
    }

    #[test]
    fn alpha_can_exceed_one_for_small_gamma() {
        // gamma < 1 breaks the unit bound; keep the counterexample on record.
        let spec = ChannelSpec::consistent(0.1, 1e-3).unwrap();
        let alpha = scaling_factor(&spec, Timestep::new(0.9).unwrap()).unwrap();
        assert!(alpha > 1.0);
    }
}
