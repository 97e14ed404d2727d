//! Sweeps and training runs driven by an [`ExperimentConfig`].
//!
//! Every random draw comes from a stream derived from the master seed with
//! [`stream_rng`]: test trial `i` uses stream `i` for its data sample and
//! channel noise, and stream `DENOISE_STREAM + i` for reverse-step noise.
//! Trials are therefore identical across SNR points, perturbations and
//! sources that coincide, and results do not depend on thread count.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::adapt::{receiver_params_with, scaling_factor, ChannelSpec, ReceiverParams};
use crate::channel::{measure_energy, snr_db_to_sigma2};
use crate::codec::LinearCodec;
use crate::denoise::{
    denoise_with_params, mlp_train, GaussianPrior, NoisePredictor, TrainedMlp,
};
use crate::error::{check_dim, Error, Result};
use crate::image::GrayImage;
use crate::latent::LatentVector;
use crate::metrics::{psnr, rmse, ssim};
use crate::rng::{standard_normal_vector, stream_rng};
use crate::schedule::Timestep;

use super::checkpoint::{load_codec, load_mlp, save_codec, save_mlp};
use super::config::{image_side, DenoiserChoice, ExperimentConfig};
use super::pgm::save_pgm;
use super::report::{fmt_num, CsvTable};
use super::source::Source;

pub const DENOISE_STREAM: u64 = 1 << 40;
pub const TRAIN_STREAM: u64 = 2 << 40;
pub const MLP_STREAM: u64 = 3 << 40;

/// Training-side state shared by all experiments.
pub struct Prepared {
    pub source: Source,
    pub codec: LinearCodec,
    pub train_latents: Vec<LatentVector>,
    /// Peak value for PSNR and SSIM.
    pub peak: f64,
    /// Lowest training value; maps data to `[0, peak]` for image output.
    pub floor: f64,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let source = Source::from_spec(&cfg.source, cfg.data_dim)?;
    let train: Vec<Vec<f64>> = (0..cfg.train_samples as u64)
        .into_par_iter()
        .map(|i| source.sample(&mut stream_rng(cfg.seed, TRAIN_STREAM + i)))
        .collect();
    let codec = match &cfg.codec_checkpoint {
        Some(path) => {
            let codec = load_codec(path)?;
            if codec.data_dim() != cfg.data_dim || codec.latent_dim() != cfg.latent_dim {
                return Err(Error::Config(format!(
                    "codec_checkpoint: {} is {}x{}, config asks for {}x{}",
                    path.display(),
                    codec.latent_dim(),
                    codec.data_dim(),
                    cfg.latent_dim,
                    cfg.data_dim
                )));
            }
            codec
        }
        None => LinearCodec::fit(&train, cfg.latent_dim)?,
    };
    let train_latents = train
        .par_iter()
        .map(|x| codec.encode(x))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = train
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let (floor, auto_peak) = if source.is_image() { (0.0, 1.0) } else { (lo, hi - lo) };
    let peak = cfg.peak.unwrap_or(auto_peak);
    if !(peak > 0.0) {
        return Err(Error::Config("peak: training data has zero range, set peak explicitly".into()));
    }
    Ok(Prepared { source, codec, train_latents, peak, floor })
}

pub fn build_predictor(
    cfg: &ExperimentConfig,
    prep: &Prepared,
) -> Result<Option<Box<dyn NoisePredictor>>> {
    Ok(match cfg.denoiser {
        DenoiserChoice::OracleGaussian => Some(Box::new(GaussianPrior::fit(&prep.train_latents)?)),
        DenoiserChoice::OracleGmm => Some(Box::new(prep.source.latent_prior(&prep.codec)?)),
        DenoiserChoice::Mlp => {
            let path = cfg
                .denoiser_checkpoint
                .as_ref()
                .ok_or_else(|| Error::Config("denoiser_checkpoint: required when denoiser = mlp".into()))?;
            let model = load_mlp(path)?;
            if model.dim() != cfg.latent_dim {
                return Err(Error::Config(format!(
                    "denoiser_checkpoint: model dimension {} differs from latent_dim {}",
                    model.dim(),
                    cfg.latent_dim
                )));
            }
            Some(Box::new(model))
        }
        DenoiserChoice::None => None,
    })
}

/// Test draws: data samples, their latents and unit channel noise.
pub struct TrialSet {
    pub xs: Vec<Vec<f64>>,
    pub zs: Vec<LatentVector>,
    pub noise: Vec<LatentVector>,
}

impl TrialSet {
    pub fn draw(source: &Source, codec: &LinearCodec, trials: usize, seed: u64) -> Result<Self> {
        let d = codec.latent_dim();
        let drawn = (0..trials as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i);
                let x = source.sample(&mut rng);
                let z = codec.encode(&x)?;
                let n = standard_normal_vector(d, &mut rng);
                Ok((x, z, n))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = TrialSet {
            xs: Vec::with_capacity(trials),
            zs: Vec::with_capacity(trials),
            noise: Vec::with_capacity(trials),
        };
        for (x, z, n) in drawn {
            set.xs.push(x);
            set.zs.push(z);
            set.noise.push(n);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.zs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zs.is_empty()
    }

    pub fn received(&self, sigma2: f64) -> Vec<LatentVector> {
        let sigma = sigma2.sqrt();
        self.zs
            .par_iter()
            .zip(&self.noise)
            .map(|(z, n)| z.iter().zip(n.iter()).map(|(a, b)| a + sigma * b).collect::<Vec<_>>().into())
            .collect()
    }
}

/// Monte Carlo averages for one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointStats {
    pub latent_mse: f64,
    /// Standard error of `latent_mse`.
    pub latent_mse_se: f64,
    pub latent_mse_baseline: f64,
    pub rmse: f64,
    pub psnr_db: f64,
    pub psnr_se: f64,
    /// `NaN` when the data does not reshape to an image at least one window wide.
    pub ssim: f64,
    /// Per-dimension energy of `alpha * y`.
    pub scaled_energy: f64,
}

struct TrialOutcome {
    latent_mse: f64,
    baseline: f64,
    rmse: f64,
    psnr: f64,
    ssim: f64,
    scaled_energy: f64,
}

pub struct Evaluator<'a> {
    pub codec: &'a LinearCodec,
    pub predictor: Option<&'a dyn NoisePredictor>,
    pub num_steps: usize,
    pub stochastic: bool,
    pub peak: f64,
    pub ssim_window: usize,
    pub seed: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(cfg: &ExperimentConfig, prep: &'a Prepared, predictor: Option<&'a dyn NoisePredictor>) -> Self {
        Evaluator {
            codec: &prep.codec,
            predictor,
            num_steps: cfg.num_steps,
            stochastic: cfg.stochastic,
            peak: prep.peak,
            ssim_window: cfg.ssim_window,
            seed: cfg.seed,
        }
    }

    fn side(&self) -> Option<usize> {
        image_side(self.codec.data_dim()).filter(|s| *s >= self.ssim_window)
    }

    /// Receiver output for trial `i`; without a predictor the received
    /// vector is passed through unchanged.
    pub fn denoise(&self, i: usize, y: &LatentVector, params: &ReceiverParams) -> Result<LatentVector> {
        match self.predictor {
            Some(p) => {
                let mut rng = stream_rng(self.seed, DENOISE_STREAM + i as u64);
                denoise_with_params(y, params, p, self.num_steps, self.stochastic, &mut rng)
            }
            None => Ok(y.clone()),
        }
    }

    pub fn run(&self, trials: &TrialSet, ys: &[LatentVector], params: &ReceiverParams) -> Result<PointStats> {
        check_dim(trials.len(), ys.len())?;
        if trials.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let side = self.side();
        let outcomes = (0..trials.len())
            .into_par_iter()
            .map(|i| {
                let (x, z, y) = (&trials.xs[i], &trials.zs[i], &ys[i]);
                let z_hat = self.denoise(i, y, params)?;
                let x_hat = self.codec.decode(&z_hat)?;
                let ssim_val = match side {
                    Some(s) => ssim(
                        &GrayImage::new(s, s, x.clone())?,
                        &GrayImage::new(s, s, x_hat.clone())?,
                        self.ssim_window,
                        self.peak,
                    )?,
                    None => f64::NAN,
                };
                Ok(TrialOutcome {
                    latent_mse: z_hat.mse(z)?,
                    baseline: y.mse(z)?,
                    rmse: rmse(x, &x_hat)?,
                    psnr: psnr(x, &x_hat, self.peak)?,
                    ssim: ssim_val,
                    scaled_energy: params.alpha * params.alpha * y.energy(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let n = outcomes.len() as f64;
        let mean = |f: fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
        let se = |f: fn(&TrialOutcome) -> f64, m: f64| {
            if outcomes.len() < 2 {
                return f64::NAN;
            }
            let ss: f64 = outcomes.iter().map(|o| (f(o) - m).powi(2)).sum();
            (ss / (n - 1.0) / n).sqrt()
        };
        let latent_mse = mean(|o| o.latent_mse);
        let psnr_db = mean(|o| o.psnr);
        Ok(PointStats {
            latent_mse,
            latent_mse_se: se(|o| o.latent_mse, latent_mse),
            latent_mse_baseline: mean(|o| o.baseline),
            rmse: mean(|o| o.rmse),
            psnr_db,
            psnr_se: se(|o| o.psnr, psnr_db),
            ssim: mean(|o| o.ssim),
            scaled_energy: mean(|o| o.scaled_energy),
        })
    }
}

/// Receiver parameters when the channel statistics are known: training
/// energy `gamma_bar` and received energy `gamma_bar + sigma2`.
pub fn matched_params(cfg: &ExperimentConfig, gamma_bar: f64, sigma2: f64) -> Result<(ChannelSpec, ReceiverParams)> {
    let spec = ChannelSpec::consistent(gamma_bar, sigma2)?;
    Ok((spec, receiver_params_with(&spec, cfg.phi_policy)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub sigma2: f64,
    pub t_star: f64,
    pub alpha: f64,
    pub stats: PointStats,
    pub trials: usize,
    pub seed: u64,
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "snr_db",
    "sigma2",
    "t_star",
    "alpha",
    "latent_mse",
    "latent_mse_baseline",
    "rmse",
    "psnr_db",
    "ssim",
    "trials",
    "seed",
];

pub fn sweep_table(rows: &[SweepRow]) -> CsvTable {
    let mut table = CsvTable::new(&SWEEP_COLUMNS);
    for r in rows {
        table.push(vec![
            fmt_num(r.snr_db),
            fmt_num(r.sigma2),
            fmt_num(r.t_star),
            fmt_num(r.alpha),
            fmt_num(r.stats.latent_mse),
            fmt_num(r.stats.latent_mse_baseline),
            fmt_num(r.stats.rmse),
            fmt_num(r.stats.psnr_db),
            fmt_num(r.stats.ssim),
            r.trials.to_string(),
            r.seed.to_string(),
        ]);
    }
    table
}

pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    run_snr_sweep_with_images(cfg, None)
}

/// Runs the sweep and, when `image_dir` is given and the data reshapes to a
/// square image, writes original/received/denoised PGMs of trial 0 per point.
pub fn run_snr_sweep_with_images(cfg: &ExperimentConfig, image_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let predictor = build_predictor(cfg, &prep)?;
    let trials = TrialSet::draw(&prep.source, &prep.codec, cfg.trials, cfg.seed)?;
    let eval = Evaluator::new(cfg, &prep, predictor.as_deref());
    let gamma_bar = prep.codec.gamma_bar();
    let mut rows = Vec::with_capacity(cfg.snr_db.len());
    for &snr_db in &cfg.snr_db {
        let sigma2 = snr_db_to_sigma2(snr_db, gamma_bar)?;
        let (_, params) = matched_params(cfg, gamma_bar, sigma2)?;
        let ys = trials.received(sigma2);
        let stats = eval.run(&trials, &ys, &params)?;
        if let (Some(dir), Some(side)) = (image_dir, image_side(cfg.data_dim)) {
            let z_hat = eval.denoise(0, &ys[0], &params)?;
            let images = [
                ("original", trials.xs[0].clone()),
                ("received", prep.codec.decode(&ys[0])?),
                ("denoised", prep.codec.decode(&z_hat)?),
            ];
            fs::create_dir_all(dir)?;
            for (tag, data) in images {
                let pixels = data.iter().map(|v| (v - prep.floor) / prep.peak).collect();
                let img = GrayImage::new(side, side, pixels)?;
                save_pgm(dir.join(format!("snr_{}_{tag}.pgm", fmt_num(snr_db))), &img, 255)?;
            }
        }
        rows.push(SweepRow {
            snr_db,
            sigma2,
            t_star: params.t_star.get(),
            alpha: params.alpha,
            stats,
            trials: cfg.trials,
            seed: cfg.seed,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbed {
    Timestep,
    Alpha,
}

impl Perturbed {
    pub fn name(self) -> &'static str {
        match self {
            Perturbed::Timestep => "t",
            Perturbed::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub snr_db: f64,
    pub param: Perturbed,
    pub perturbation_pct: f64,
    pub sigma2: f64,
    pub t: f64,
    pub alpha: f64,
    /// `None` when the perturbed timestep leaves `(0, 1)`.
    pub stats: Option<PointStats>,
    pub trials: usize,
    pub seed: u64,
}

pub const SENSITIVITY_COLUMNS: [&str; 14] = [
    "snr_db",
    "perturbed_param",
    "perturbation_pct",
    "sigma2",
    "t",
    "alpha",
    "latent_mse",
    "latent_mse_baseline",
    "rmse",
    "psnr_db",
    "ssim",
    "trials",
    "seed",
    "status",
];

pub fn sensitivity_table(rows: &[SensitivityRow]) -> CsvTable {
    let mut table = CsvTable::new(&SENSITIVITY_COLUMNS);
    for r in rows {
        let mut rec = vec![
            fmt_num(r.snr_db),
            r.param.name().to_owned(),
            fmt_num(r.perturbation_pct),
            fmt_num(r.sigma2),
            fmt_num(r.t),
            fmt_num(r.alpha),
        ];
        match &r.stats {
            Some(s) => rec.extend(
                [s.latent_mse, s.latent_mse_baseline, s.rmse, s.psnr_db, s.ssim].map(fmt_num),
            ),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rec.push(r.trials.to_string());
        rec.push(r.seed.to_string());
        rec.push(match r.stats {
            Some(_) => "ok".to_owned(),
            None => "skipped: perturbed t outside (0, 1)".to_owned(),
        });
        table.push(rec);
    }
    table
}

pub fn run_sensitivity(cfg: &ExperimentConfig) -> Result<Vec<SensitivityRow>> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let predictor = build_predictor(cfg, &prep)?;
    let trials = TrialSet::draw(&prep.source, &prep.codec, cfg.trials, cfg.seed)?;
    let eval = Evaluator::new(cfg, &prep, predictor.as_deref());
    let gamma_bar = prep.codec.gamma_bar();
    let mut rows = Vec::new();
    for &snr_db in &cfg.snr_db {
        let sigma2 = snr_db_to_sigma2(snr_db, gamma_bar)?;
        let (spec, base) = matched_params(cfg, gamma_bar, sigma2)?;
        let ys = trials.received(sigma2);
        for param in [Perturbed::Timestep, Perturbed::Alpha] {
            for &p in &cfg.perturbations {
                let factor = 1.0 + p / 100.0;
                let params = if p == 0.0 {
                    Some(base)
                } else {
                    match param {
                        Perturbed::Timestep => {
                            let t = base.t_star.get() * factor;
                            if t > 0.0 && t < 1.0 {
                                let t = Timestep::new(t)?;
                                Some(ReceiverParams { t_star: t, alpha: scaling_factor(&spec, t)?, phi: base.phi })
                            } else {
                                None
                            }
                        }
                        Perturbed::Alpha => Some(ReceiverParams { alpha: base.alpha * factor, ..base }),
                    }
                };
                let (t, alpha, stats) = match params {
                    Some(pr) => (pr.t_star.get(), pr.alpha, Some(eval.run(&trials, &ys, &pr)?)),
                    None => (base.t_star.get() * factor, f64::NAN, None),
                };
                rows.push(SensitivityRow {
                    snr_db,
                    param,
                    perturbation_pct: p,
                    sigma2,
                    t,
                    alpha,
                    stats,
                    trials: cfg.trials,
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    InDistribution,
    OutOfDistribution,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::InDistribution => "in-distribution",
            Split::OutOfDistribution => "out-of-distribution",
        }
    }
}

/// How the receiver obtains the source energy it feeds the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaPath {
    /// Energy estimated from the test batch: `y_energy - sigma2`.
    General,
    /// Unit energy assumed regardless of the test data.
    Shortcut,
}

impl GammaPath {
    pub fn name(self) -> &'static str {
        match self {
            GammaPath::General => "general",
            GammaPath::Shortcut => "shortcut",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub split: Split,
    pub path: GammaPath,
    pub snr_db: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub t_star: f64,
    pub alpha: f64,
    pub stats: PointStats,
    /// `(1 - t*)^2 gamma + t*` for the gamma this path used.
    pub target_energy: f64,
    pub trials: usize,
    pub seed: u64,
}

pub const OOD_COLUMNS: [&str; 16] = [
    "split",
    "gamma_path",
    "snr_db",
    "sigma2",
    "gamma",
    "t_star",
    "alpha",
    "latent_mse",
    "latent_mse_baseline",
    "rmse",
    "psnr_db",
    "ssim",
    "scaled_energy",
    "target_energy",
    "trials",
    "seed",
];

pub fn ood_table(rows: &[OodRow]) -> CsvTable {
    let mut table = CsvTable::new(&OOD_COLUMNS);
    for r in rows {
        let s = &r.stats;
        let mut rec = vec![r.split.name().to_owned(), r.path.name().to_owned()];
        rec.extend(
            [
                r.snr_db,
                r.sigma2,
                r.gamma,
                r.t_star,
                r.alpha,
                s.latent_mse,
                s.latent_mse_baseline,
                s.rmse,
                s.psnr_db,
                s.ssim,
                s.scaled_energy,
                r.target_energy,
            ]
            .map(fmt_num),
        );
        rec.push(r.trials.to_string());
        rec.push(r.seed.to_string());
        table.push(rec);
    }
    table
}

pub fn run_ood_sweep(cfg: &ExperimentConfig) -> Result<Vec<OodRow>> {
    cfg.validate()?;
    let test_spec = cfg
        .test_source
        .as_ref()
        .ok_or_else(|| Error::Config("test_source: required for ood-sweep".into()))?;
    let prep = prepare(cfg)?;
    let predictor = build_predictor(cfg, &prep)?;
    let test_source = Source::from_spec(test_spec, cfg.data_dim)?;
    let eval = Evaluator::new(cfg, &prep, predictor.as_deref());
    let splits = [
        (Split::InDistribution, TrialSet::draw(&prep.source, &prep.codec, cfg.trials, cfg.seed)?),
        (Split::OutOfDistribution, TrialSet::draw(&test_source, &prep.codec, cfg.trials, cfg.seed)?),
    ];
    let gamma_bar = prep.codec.gamma_bar();
    let mut rows = Vec::new();
    for (split, trials) in &splits {
        for &snr_db in &cfg.snr_db {
            let sigma2 = snr_db_to_sigma2(snr_db, gamma_bar)?;
            let ys = trials.received(sigma2);
            let y_energy = measure_energy(&ys)?;
            for path in [GammaPath::General, GammaPath::Shortcut] {
                let gamma = match path {
                    GammaPath::General => {
                        let g = y_energy - sigma2;
                        if !(g > 0.0) {
                            return Err(Error::NegativeEnergy { y_energy, sigma2 });
                        }
                        g
                    }
                    GammaPath::Shortcut => 1.0,
                };
                let spec = ChannelSpec::new(gamma, sigma2, y_energy)?;
                let params = receiver_params_with(&spec, cfg.phi_policy)?;
                let stats = eval.run(trials, &ys, &params)?;
                let t = params.t_star.get();
                rows.push(OodRow {
                    split: *split,
                    path,
                    snr_db,
                    sigma2,
                    gamma,
                    t_star: t,
                    alpha: params.alpha,
                    stats,
                    target_energy: (1.0 - t).powi(2) * gamma + t,
                    trials: cfg.trials,
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(rows)
}

pub fn train_codec(cfg: &ExperimentConfig) -> Result<LinearCodec> {
    cfg.validate()?;
    Ok(prepare(cfg)?.codec)
}

pub struct DenoiserRun {
    pub codec: LinearCodec,
    pub trained: TrainedMlp,
}

pub fn train_denoiser(cfg: &ExperimentConfig) -> Result<DenoiserRun> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let mut rng = stream_rng(cfg.seed, MLP_STREAM);
    let trained = mlp_train(&prep.train_latents, &cfg.mlp, &mut rng)?;
    Ok(DenoiserRun { codec: prep.codec, trained })
}

pub fn write_codec(dir: &Path, codec: &LinearCodec) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_codec(dir.join("codec.ltns"), codec)
}

pub fn write_denoiser(dir: &Path, run: &DenoiserRun) -> Result<()> {
    write_codec(dir, &run.codec)?;
    save_mlp(dir.join("denoiser.ltns"), &run.trained.model)?;
    let mut trace = CsvTable::new(&["step", "loss"]);
    for (i, l) in run.trained.loss_trace.iter().enumerate() {
        trace.push(vec![i.to_string(), fmt_num(*l)]);
    }
    trace.write(dir.join("loss_trace.csv"))
}
