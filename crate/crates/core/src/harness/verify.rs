//! Self-audit of the closed forms, the diffusion parameterization and the
//! denoisers. Each check reports a tolerance, a measured value and a verdict.

use rand::Rng;

use crate::adapt::{receiver_params, scaling_factor, timestep_for_phi, timestep_simplified, ChannelSpec};
use crate::denoise::{mlp_gradient, GaussianPrior, GmmComponent, GmmPrior, MlpConfig, MlpPredictor, TrainingExample};
use crate::error::Result;
use crate::latent::LatentVector;
use crate::rng::{standard_normal_vector, stream_rng, SimRng};
use crate::schedule::{forward_corrupt, reverse_chain, reverse_step, single_step_denoise, ReverseStepPlan, Timestep};

use super::config::ExperimentConfig;
use super::report::{fmt_num, CsvTable};

pub const VERIFY_STREAM: u64 = 4 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub value: f64,
    pub passed: bool,
}

impl CheckResult {
    /// Passes when `value <= tolerance`; `NaN` never passes.
    fn at_most(name: &'static str, tolerance: f64, value: f64) -> Self {
        CheckResult { name, tolerance, value, passed: value <= tolerance }
    }

    /// Passes when `value < tolerance`.
    fn below(name: &'static str, tolerance: f64, value: f64) -> Self {
        CheckResult { name, tolerance, value, passed: value < tolerance }
    }

    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }
}

pub fn verify_table(checks: &[CheckResult]) -> CsvTable {
    let mut t = CsvTable::new(&["check", "tolerance", "value", "verdict"]);
    for c in checks {
        t.push(vec![c.name.to_owned(), fmt_num(c.tolerance), fmt_num(c.value), c.verdict().to_owned()]);
    }
    t
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Root of `(1 - t)^2 - phi t` on `[0, 1]` by bisection.
pub fn bisect_timestep(phi: f64) -> f64 {
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

/// Scalar posterior mean `E[x0 | x_t]` by trapezoid quadrature on `[-20, 20]`.
pub fn quadrature_posterior_mean(prior_pdf: impl Fn(f64) -> f64, x_t: f64, t: f64, points: usize) -> f64 {
    let (lo, hi) = (-20.0, 20.0);
    let h = (hi - lo) / (points - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..points {
        let x0 = lo + h * i as f64;
        let r = x_t - (1.0 - t) * x0;
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        let p = w * prior_pdf(x0) * (-0.5 * r * r / t).exp();
        num += p * x0;
        den += p;
    }
    num / den
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_check(model: &MlpPredictor, batch: &[TrainingExample], h: f64) -> Result<f64> {
    let analytic = mlp_gradient(model, batch)?.flatten();
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_flat_params(&p)?;
        let up = mlp_gradient(&probe, batch)?.loss;
        p[k] = base[k] - h;
        probe.set_flat_params(&p)?;
        let down = mlp_gradient(&probe, batch)?.loss;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn rng(cfg: &ExperimentConfig, k: u64) -> SimRng {
    stream_rng(cfg.seed, VERIFY_STREAM + k)
}

pub fn run_verify_theory(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    cfg.validate()?;
    let mut out = Vec::new();

    let phis = log_grid(1e-6, 1e6, 1000);
    let mut residual = 0.0f64;
    let mut bisection = 0.0f64;
    let mut violations = 0usize;
    let mut prev = f64::INFINITY;
    for &phi in &phis {
        let t = timestep_for_phi(phi)?.get();
        residual = residual.max(((1.0 - t).powi(2) - phi * t).abs());
        bisection = bisection.max((t - bisect_timestep(phi)).abs());
        if !(t < prev) {
            violations += 1;
        }
        prev = t;
    }
    out.push(CheckResult::at_most("timestep_root_residual", 1e-12, residual));
    out.push(CheckResult::at_most("timestep_bisection_agreement", 1e-12, bisection));
    out.push(CheckResult::at_most("timestep_strictly_decreasing", 0.0, violations as f64));
    out.push(CheckResult::below("timestep_small_phi_limit", 1e-4, 1.0 - timestep_for_phi(1e-9)?.get()));
    out.push(CheckResult::below("timestep_large_phi_limit", 1e-6, timestep_for_phi(1e12)?.get()));

    let mut simplified = 0.0f64;
    for s2 in log_grid(1e-6, 1e6, 1000) {
        let gap = timestep_simplified(s2)?.get() - timestep_for_phi(1.0 / s2)?.get();
        simplified = simplified.max(gap.abs());
    }
    out.push(CheckResult::at_most("unit_energy_timestep_agreement", 1e-12, simplified));

    let mut r = rng(cfg, 0);
    let mut identity = 0.0f64;
    for _ in 0..1000 {
        let gamma = 10f64.powf(r.random_range(-2.0..2.0));
        let sigma2 = 10f64.powf(r.random_range(-3.0..3.0));
        let t = Timestep::new(r.random_range(0.0..=1.0))?;
        let alpha = scaling_factor(&ChannelSpec::consistent(gamma, sigma2)?, t)?;
        let rhs = (1.0 - t.get()).powi(2) * gamma + t.get();
        identity = identity.max((alpha * alpha * (gamma + sigma2) - rhs).abs() / rhs.max(1.0));
    }
    out.push(CheckResult::at_most("scaling_moment_identity", 1e-12, identity));

    let mut matched = 0.0f64;
    let mut matched_sq = 0.0f64;
    for gamma in [0.1, 1.0, 10.0] {
        for s2 in log_grid(1e-3, 1e3, 200) {
            let p = receiver_params(&ChannelSpec::consistent(gamma, s2)?)?;
            let t = p.t_star.get();
            matched = matched.max((p.alpha - (1.0 - t)).abs());
            if gamma == 1.0 {
                matched_sq = matched_sq.max((p.alpha * p.alpha - t / s2).abs());
            }
        }
    }
    out.push(CheckResult::at_most("matched_alpha_equals_one_minus_t", 1e-9, matched));
    out.push(CheckResult::at_most("matched_alpha_squared_equals_t_over_sigma2", 1e-9, matched_sq));

    // Monte Carlo alignment of alpha * y with the forward marginal.
    let d = 16;
    let n = cfg.verify_trials;
    let mut energy_err = 0.0f64;
    let mut coef_err = 0.0f64;
    for (k, s2) in [0.1, 1.0, 10.0].into_iter().enumerate() {
        let p = receiver_params(&ChannelSpec::consistent(1.0, s2)?)?;
        let alpha = if cfg.inject_alpha_sign_bug { -p.alpha } else { p.alpha };
        let t = p.t_star.get();
        let mut r = rng(cfg, 1 + k as u64);
        let sigma = s2.sqrt();
        let (mut energy, mut cross, mut zz) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal_vector(d, &mut r);
            let noise = standard_normal_vector(d, &mut r);
            for (zi, ni) in z.iter().zip(noise.iter()) {
                let v = alpha * (zi + sigma * ni);
                energy += v * v;
                cross += v * zi;
                zz += zi * zi;
            }
        }
        let target = (1.0 - t).powi(2) + t;
        energy_err = energy_err.max((energy / (n * d) as f64 - target).abs() / target);
        coef_err = coef_err.max((cross / zz - (1.0 - t)).abs() / (1.0 - t));
    }
    out.push(CheckResult::at_most("moment_alignment_energy", 0.01, energy_err));
    out.push(CheckResult::at_most("moment_alignment_signal_coefficient", 0.01, coef_err));

    let mut r = rng(cfg, 10);
    let t = Timestep::new(0.25)?;
    let mut second = 0.0;
    for _ in 0..n {
        let x0 = standard_normal_vector(d, &mut r);
        second += forward_corrupt(&x0, t, &mut r)?.x_t.squared_norm();
    }
    let second = second / (n * d) as f64;
    out.push(CheckResult::at_most("forward_marginal_second_moment", 0.01, (second - 0.8125).abs() / 0.8125));

    let mut r = rng(cfg, 11);
    let mut telescoping = 0.0f64;
    for _ in 0..1000 {
        let x0 = standard_normal_vector(d, &mut r);
        let t = Timestep::new(r.random_range(0.01..0.99))?;
        let fwd = forward_corrupt(&x0, t, &mut r)?;
        let plan = ReverseStepPlan::new(t, t.get(), false)?;
        let back = reverse_step(&fwd.x_t, &plan, &fwd.eps, &mut r)?;
        for (a, b) in back.iter().zip(x0.iter()) {
            telescoping = telescoping.max((a - b).abs());
        }
    }
    out.push(CheckResult::at_most("telescoping_single_step", 1e-9, telescoping));

    let mut r = rng(cfg, 12);
    let prior = GaussianPrior::standard(d);
    let p = receiver_params(&ChannelSpec::consistent(1.0, 1.0)?)?;
    let mut chain_gap = 0.0f64;
    let (mut mse, mut base) = (0.0, 0.0);
    for i in 0..n {
        let z = standard_normal_vector(d, &mut r);
        let y: LatentVector = z
            .iter()
            .zip(standard_normal_vector(d, &mut r).iter())
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>()
            .into();
        let x = y.scaled(p.alpha);
        let z_hat = reverse_chain(&x, p.t_star, 1, &prior, false, &mut r)?;
        if i < 1000 {
            let eps = crate::denoise::NoisePredictor::predict(&prior, &x, p.t_star)?;
            let direct = single_step_denoise(&x, p.t_star, &eps)?;
            for (a, b) in z_hat.iter().zip(direct.iter()) {
                chain_gap = chain_gap.max((a - b).abs());
            }
        }
        mse += z_hat.mse(&z)?;
        base += y.mse(&z)?;
    }
    let mse = mse / n as f64;
    let base = base / n as f64;
    out.push(CheckResult::at_most("single_step_mmse", 0.02, (mse - 0.5).abs() / 0.5));
    out.push(CheckResult::below("mmse_below_passthrough", 1.0, mse / base));
    out.push(CheckResult::at_most("one_step_chain_matches_single_step", 0.0, chain_gap));

    let mut grad = 0.0f64;
    for seed in 0..5u64 {
        let mut r = rng(cfg, 20 + seed);
        let cfg_m = MlpConfig { hidden_layers: 2, width: 4, ..MlpConfig::default() };
        let model = MlpPredictor::new_random(3, cfg_m, &mut r)?;
        let batch: Vec<TrainingExample> = (0..4)
            .map(|_| {
                let x0 = standard_normal_vector(3, &mut r);
                crate::denoise::sample_example(&x0, 0.05, &mut r)
            })
            .collect();
        grad = grad.max(gradient_check(&model, &batch, 1e-5)?);
    }
    out.push(CheckResult::at_most("mlp_gradient_finite_difference", 1e-4, grad));

    let mut quad = 0.0f64;
    for (w, m, v, x_t, t) in [(0.5, 2.0, 0.25, 1.0, 0.25), (0.3, 1.0, 0.5, -0.4, 0.6)] {
        let prior = GmmPrior::new(vec![
            GmmComponent { weight: w, mean: vec![-m], var: vec![v] },
            GmmComponent { weight: 1.0 - w, mean: vec![m], var: vec![v] },
        ])?;
        let t = Timestep::new(t)?;
        let got = prior.posterior_mean(&LatentVector::new(vec![x_t]), t)?[0];
        let pdf = |u: f64| w * normal_pdf(u, -m, v) + (1.0 - w) * normal_pdf(u, m, v);
        let want = quadrature_posterior_mean(pdf, x_t, t.get(), 1_000_000);
        quad = quad.max((got - want).abs());
    }
    out.push(CheckResult::at_most("gmm_posterior_vs_quadrature", 1e-6, quad));

    Ok(out)
}
