//! Continuous-time diffusion on the interpolation path
//! `x_t = (1 - t) x_0 + sqrt(t) eps`, `t` in `[0, 1]`.
//!
//! The drift of this path is the constant `-x_0`, so integrating it from `t`
//! down to `t - dt` contributes `dt * x0_hat`, where `x0_hat` is recovered
//! from the noise prediction. The noise that was added on the way up is
//! removed with coefficient `dt / sqrt(t)` (unit-variance `eps_hat`), and the
//! stochastic variant re-injects fresh noise with variance `dt (t - dt) / t`
//! so that the marginal at `t - dt` keeps noise variance exactly `t - dt`.

use rand::Rng;

use crate::denoise::NoisePredictor;
use crate::error::{check_dim, Error, Result};
use crate::latent::LatentVector;
use crate::rng::standard_normal_vector;

/// `1 - t` below this is treated as `t = 1` and rejected wherever the step
/// needs to divide by it.
pub const DEGENERATE_GUARD: f64 = 1e-9;

/// Diffusion time in `[0, 1]`: 0 is clean data, 1 is pure noise.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Timestep(f64);

impl Timestep {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("timestep {t} outside [0, 1]")));
        }
        Ok(Timestep(t))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn zero() -> Self {
        Timestep(0.0)
    }

    pub fn one() -> Self {
        Timestep(1.0)
    }
}

impl From<Timestep> for f64 {
    fn from(t: Timestep) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub x_t: LatentVector,
    pub t: Timestep,
    /// The unit-variance noise realization that produced `x_t`.
    pub eps: LatentVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseStepPlan {
    pub t_from: Timestep,
    pub dt: f64,
    pub stochastic: bool,
}

impl ReverseStepPlan {
    pub fn new(t_from: Timestep, dt: f64, stochastic: bool) -> Result<Self> {
        let plan = ReverseStepPlan {
            t_from,
            dt,
            stochastic,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.t_from.get();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidPlan(format!(
                "step size {} must be positive",
                self.dt
            )));
        }
        if self.dt > t {
            return Err(Error::InvalidPlan(format!(
                "step size {} exceeds t_from = {t}",
                self.dt
            )));
        }
        Ok(())
    }

    pub fn t_to(&self) -> f64 {
        (self.t_from.get() - self.dt).max(0.0)
    }
}

/// Draws `x_t = (1 - t) x0 + sqrt(t) eps` with `eps ~ N(0, I)`.
pub fn forward_corrupt<R: Rng + ?Sized>(
    x0: &LatentVector,
    t: Timestep,
    rng: &mut R,
) -> Result<ForwardSample> {
    x0.ensure_finite("x0")?;
    let eps = standard_normal_vector(x0.dim(), rng);
    let x_t = forward_with_noise(x0, t, &eps)?;
    Ok(ForwardSample { x_t, t, eps })
}

/// Deterministic half of [`forward_corrupt`] for a given noise realization.
pub fn forward_with_noise(
    x0: &LatentVector,
    t: Timestep,
    eps: &LatentVector,
) -> Result<LatentVector> {
    check_dim(x0.dim(), eps.dim())?;
    let t = t.get();
    let (signal, noise) = (1.0 - t, t.sqrt());
    Ok(x0
        .iter()
        .zip(eps.iter())
        .map(|(x, e)| signal * x + noise * e)
        .collect::<Vec<_>>()
        .into())
}

/// Clean-data estimate implied by a noise estimate: `(x_t - sqrt(t) eps_hat) / (1 - t)`.
pub fn x0_from_eps(x_t: &LatentVector, t: Timestep, eps_hat: &LatentVector) -> Result<LatentVector> {
    check_dim(x_t.dim(), eps_hat.dim())?;
    let t = t.get();
    let one_minus = 1.0 - t;
    if one_minus < DEGENERATE_GUARD {
        return Err(Error::DegenerateTimestep { t });
    }
    let s = t.sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat.iter())
        .map(|(x, e)| (x - s * e) / one_minus)
        .collect::<Vec<_>>()
        .into())
}

/// One reverse transition from `t` to `t - dt`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &LatentVector,
    plan: &ReverseStepPlan,
    eps_hat: &LatentVector,
    rng: &mut R,
) -> Result<LatentVector> {
    plan.validate()?;
    let t = plan.t_from.get();
    let dt = plan.dt;
    let x0_hat = x0_from_eps(x_t, plan.t_from, eps_hat)?;
    let eps_coef = dt / t.sqrt();
    let remaining = t - dt;
    if remaining == 0.0 {
        // x_t + t x0_hat - sqrt(t) eps_hat reduces to x0_hat exactly.
        return Ok(x0_hat);
    }

    let mut out: Vec<f64> = x_t
        .iter()
        .zip(x0_hat.iter())
        .zip(eps_hat.iter())
        .map(|((x, x0), e)| x + dt * x0 - eps_coef * e)
        .collect();

    if plan.stochastic && remaining > 0.0 {
        let noise_std = (dt * remaining / t).sqrt();
        let fresh = standard_normal_vector(out.len(), rng);
        for (o, n) in out.iter_mut().zip(fresh.iter()) {
            *o += noise_std * n;
        }
    }
    Ok(out.into())
}

/// Remark-style one-shot reconstruction: the reverse step with `dt = t`.
pub fn single_step_denoise(
    x_t: &LatentVector,
    t: Timestep,
    eps_hat: &LatentVector,
) -> Result<LatentVector> {
    if t.get() <= 0.0 {
        return Err(Error::Domain("single-step denoising needs t > 0".into()));
    }
    x0_from_eps(x_t, t, eps_hat)
}

/// Runs `num_steps` uniform reverse steps from `t_start` down to 0.
///
/// The grid is `t_k = t_start * (num_steps - k) / num_steps`, so the last
/// step lands exactly on 0 and carries no fresh noise. With `t_start = 0`
/// there is nothing to denoise and the input is returned unchanged.
pub fn reverse_chain<P, R>(
    x_start: &LatentVector,
    t_start: Timestep,
    num_steps: usize,
    predictor: &P,
    stochastic: bool,
    rng: &mut R,
) -> Result<LatentVector>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    if num_steps == 0 {
        return Err(Error::InvalidPlan("num_steps must be at least 1".into()));
    }
    if t_start.get() == 0.0 {
        return Ok(x_start.clone());
    }
    let n = num_steps as f64;
    let t0 = t_start.get();
    let mut x = x_start.clone();
    for k in 0..num_steps {
        let t_from = if k == 0 { t0 } else { t0 * (n - k as f64) / n };
        let t_to = t0 * (n - (k + 1) as f64) / n;
        let t_from = Timestep::new(t_from)?;
        let eps_hat = predictor.predict(&x, t_from)?;
        check_dim(x.dim(), eps_hat.dim())?;
        let plan = ReverseStepPlan::new(t_from, t_from.get() - t_to, stochastic)?;
        x = reverse_step(&x, &plan, &eps_hat, rng)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    struct Zero;

    impl NoisePredictor for Zero {
        fn predict(&self, x_t: &LatentVector, _t: Timestep) -> Result<LatentVector> {
            Ok(LatentVector::zeros(x_t.dim()))
        }
    }

    fn ts(t: f64) -> Timestep {
        Timestep::new(t).unwrap()
    }

    #[test]
    fn timestep_rejects_out_of_range() {
        assert!(Timestep::new(-0.1).is_err());
        assert!(Timestep::new(1.1).is_err());
        assert!(Timestep::new(f64::NAN).is_err());
        assert!(Timestep::new(1.0).is_ok());
    }

    #[test]
    fn forward_identity_at_zero_and_noise_at_one() {
        let mut rng = rng_from_seed(1);
        let v = LatentVector::new(vec![0.3, -1.2, 4.0]);
        let s = forward_corrupt(&v, ts(0.0), &mut rng).unwrap();
        assert_eq!(s.x_t, v);

        let z = LatentVector::zeros(5);
        let s = forward_corrupt(&z, ts(1.0), &mut rng).unwrap();
        assert_eq!(s.x_t, s.eps);
    }

    #[test]
    fn forward_rejects_non_finite() {
        let mut rng = rng_from_seed(1);
        let v = LatentVector::new(vec![0.0, f64::INFINITY]);
        assert!(matches!(
            forward_corrupt(&v, ts(0.5), &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn forward_second_moment_matches_marginal() {
        let mut rng = rng_from_seed(2);
        let x0 = LatentVector::new(vec![1.0; 16]);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = forward_corrupt(&x0, ts(0.25), &mut rng).unwrap();
            acc += s.x_t.energy();
        }
        let m2 = acc / draws as f64;
        let expected = 0.75f64.powi(2) + 0.25;
        assert!((m2 - expected).abs() / expected < 0.01, "{m2}");
    }

    #[test]
    fn telescoping_with_true_noise() {
        let mut rng = rng_from_seed(3);
        let x0 = LatentVector::new(vec![0.7, -2.0, 1.5, 0.0]);
        for &t in &[0.01, 0.3, 0.5, 0.9, 0.99] {
            let s = forward_corrupt(&x0, ts(t), &mut rng).unwrap();
            let plan = ReverseStepPlan::new(ts(t), t, true).unwrap();
            let out = reverse_step(&s.x_t, &plan, &s.eps, &mut rng).unwrap();
            for (a, b) in out.iter().zip(x0.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reverse_step_hand_expansion() {
        let mut rng = rng_from_seed(4);
        let x_t = LatentVector::new(vec![0.5]);
        let plan = ReverseStepPlan::new(ts(0.5), 0.5, false).unwrap();
        let out = reverse_step(&x_t, &plan, &LatentVector::zeros(1), &mut rng).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn plan_validation() {
        assert!(matches!(
            ReverseStepPlan::new(ts(0.3), 0.4, false),
            Err(Error::InvalidPlan(_))
        ));
        assert!(ReverseStepPlan::new(ts(0.3), 0.0, false).is_err());
        assert!(ReverseStepPlan::new(ts(0.3), 0.3, false).is_ok());
    }

    #[test]
    fn reverse_step_preserves_marginal_with_true_noise() {
        // x0 ~ N(0, I), eps_hat = the forward noise itself.
        let mut rng = rng_from_seed(5);
        let d = 16;
        let draws = 100_000;
        let plan = ReverseStepPlan::new(ts(0.5), 0.25, true).unwrap();
        let mut acc = 0.0;
        for _ in 0..draws {
            let x0 = standard_normal_vector(d, &mut rng);
            let s = forward_corrupt(&x0, ts(0.5), &mut rng).unwrap();
            let out = reverse_step(&s.x_t, &plan, &s.eps, &mut rng).unwrap();
            acc += out.energy();
        }
        let m2 = acc / draws as f64;
        assert!((m2 - 0.8125).abs() / 0.8125 < 0.01, "{m2}");
    }

    #[test]
    fn variance_bookkeeping_identity() {
        for i in 1..100 {
            let t = i as f64 / 100.0;
            for j in 1..=20 {
                let dt = t * j as f64 / 20.0;
                let lhs = (t.sqrt() - dt / t.sqrt()).powi(2) + dt * (t - dt) / t;
                assert!((lhs - (t - dt)).abs() < 1e-12, "t={t} dt={dt}");
            }
        }
    }

    #[test]
    fn single_step_examples() {
        let out = single_step_denoise(&LatentVector::new(vec![0.5]), ts(0.5), &LatentVector::zeros(1))
            .unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);

        let t = 0.381966011;
        let out = single_step_denoise(
            &LatentVector::new(vec![1.0]),
            ts(t),
            &LatentVector::new(vec![0.809017]),
        )
        .unwrap();
        let expected = (1.0 - t.sqrt() * 0.809017) / (1.0 - t);
        assert!((out[0] - expected).abs() < 1e-12);
        assert!((out[0] - 0.809017).abs() < 1e-5);

        assert!(matches!(
            single_step_denoise(&LatentVector::zeros(1), ts(1.0), &LatentVector::zeros(1)),
            Err(Error::DegenerateTimestep { .. })
        ));
        assert!(single_step_denoise(&LatentVector::zeros(1), ts(1.0 - 1e-10), &LatentVector::zeros(1)).is_err());
    }

    #[test]
    fn single_step_inverts_forward() {
        let mut rng = rng_from_seed(6);
        let x0 = standard_normal_vector(8, &mut rng);
        let s = forward_corrupt(&x0, ts(0.42), &mut rng).unwrap();
        let out = single_step_denoise(&s.x_t, s.t, &s.eps).unwrap();
        for (a, b) in out.iter().zip(x0.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn chain_of_zeros_stays_zero() {
        let mut rng = rng_from_seed(7);
        let out = reverse_chain(&LatentVector::zeros(4), ts(0.6), 5, &Zero, false, &mut rng).unwrap();
        assert_eq!(out, LatentVector::zeros(4));
    }

    #[test]
    fn chain_rejects_zero_steps() {
        let mut rng = rng_from_seed(7);
        assert!(reverse_chain(&LatentVector::zeros(1), ts(0.5), 0, &Zero, false, &mut rng).is_err());
    }

    struct Scaled(f64);

    impl NoisePredictor for Scaled {
        fn predict(&self, x_t: &LatentVector, _t: Timestep) -> Result<LatentVector> {
            Ok(x_t.scaled(self.0))
        }
    }

    #[test]
    fn one_step_chain_is_single_step_bit_for_bit() {
        let mut rng = rng_from_seed(8);
        let p = Scaled(0.37);
        for _ in 0..500 {
            let x = standard_normal_vector(6, &mut rng);
            let t = ts(rng.random_range(0.001..0.999));
            let chain = reverse_chain(&x, t, 1, &p, false, &mut rng).unwrap();
            let eps = p.predict(&x, t).unwrap();
            let direct = single_step_denoise(&x, t, &eps).unwrap();
            assert_eq!(chain, direct);
        }
    }
}
