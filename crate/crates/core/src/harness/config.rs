//! Experiment configuration: flat UTF-8 `key = value` lines, `#` comments.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `experiment` | (subcommand) | `snr-sweep`, `sensitivity`, `ood-sweep`, `verify-theory`, `train-codec`, `train-denoiser` |
//! | `source` | `gaussian` | training source: `gaussian`, `gmm`, `pgm-dir` |
//! | `source_decay` | `0.9` | gaussian: coordinate `i` has variance `decay^i` |
//! | `gmm_weights` | `0.5,0.5` | gmm: mixture weights |
//! | `gmm_means` | `-2,2` | gmm: component `k` has mean `m_k * (1, ..., 1)` |
//! | `gmm_vars` | `0.25,0.25` | gmm: isotropic component variances |
//! | `pgm_dir` | | pgm-dir: directory of P5 images cut into patches |
//! | `test_source`, `test_source_decay`, `test_gmm_*`, `test_pgm_dir` | | out-of-distribution source (ood-sweep) |
//! | `latent_dim` | `16` | latent dimension `d` |
//! | `data_dim` | `64` | data dimension `n`; a perfect square for image metrics |
//! | `train_samples` | `20000` | samples used to fit the codec and priors |
//! | `snr_db` | `-10:10:2.5` | comma list or inclusive `start:stop:step` |
//! | `trials` | `10000` | Monte Carlo trials per grid point |
//! | `seed` | `0` | master seed |
//! | `out_dir` | `out` | output directory |
//! | `denoiser` | `oracle-gaussian` | `oracle-gaussian`, `oracle-gmm`, `mlp`, `none` |
//! | `denoiser_checkpoint` | | MLP checkpoint, required for `mlp` |
//! | `codec_checkpoint` | | load the codec instead of fitting it |
//! | `num_steps` | `1` | reverse steps from `t*` to 0 |
//! | `stochastic` | `false` | inject the reverse-step noise |
//! | `phi_policy` | `strict` | `strict` or `clamp` when the received energy is below the noise floor |
//! | `peak` | `auto` | PSNR/SSIM peak; `auto` is 1 for images, the training data range otherwise |
//! | `ssim_window` | `8` | SSIM box window side |
//! | `perturbations` | `-50,-20,-10,-5,0,5,10,20,50` | sensitivity perturbations in percent |
//! | `save_images` | `false` | write PGM triplets for the first trial of each SNR point |
//! | `mlp_hidden_layers`, `mlp_width`, `mlp_learning_rate`, `mlp_beta1`, `mlp_beta2`, `mlp_adam_eps`, `mlp_batch_size`, `mlp_steps`, `mlp_t_min` | see [`MlpConfig`] | denoiser training |
//! | `verify_trials` | `200000` | Monte Carlo size for verify-theory |
//! | `inject_alpha_sign_bug` | `false` | flips the sign of `alpha` in verify-theory (harness self-test) |
//!
//! Relative paths written in a config file are resolved against its directory;
//! the default `out_dir` and the `--out` flag are relative to the working directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adapt::PhiPolicy;
use crate::denoise::MlpConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SnrSweep,
    Sensitivity,
    OodSweep,
    VerifyTheory,
    TrainCodec,
    TrainDenoiser,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SnrSweep => "snr-sweep",
            ExperimentKind::Sensitivity => "sensitivity",
            ExperimentKind::OodSweep => "ood-sweep",
            ExperimentKind::VerifyTheory => "verify-theory",
            ExperimentKind::TrainCodec => "train-codec",
            ExperimentKind::TrainDenoiser => "train-denoiser",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "snr-sweep" => ExperimentKind::SnrSweep,
            "sensitivity" => ExperimentKind::Sensitivity,
            "ood-sweep" => ExperimentKind::OodSweep,
            "verify-theory" => ExperimentKind::VerifyTheory,
            "train-codec" => ExperimentKind::TrainCodec,
            "train-denoiser" => ExperimentKind::TrainDenoiser,
            other => return Err(Error::Config(format!("unknown experiment '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Gaussian { decay: f64 },
    Gmm { weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64> },
    PgmDir { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserChoice {
    OracleGaussian,
    OracleGmm,
    Mlp,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub source: SourceSpec,
    pub test_source: Option<SourceSpec>,
    pub latent_dim: usize,
    pub data_dim: usize,
    pub train_samples: usize,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub denoiser: DenoiserChoice,
    pub denoiser_checkpoint: Option<PathBuf>,
    pub codec_checkpoint: Option<PathBuf>,
    pub num_steps: usize,
    pub stochastic: bool,
    pub phi_policy: PhiPolicy,
    /// `None` means automatic.
    pub peak: Option<f64>,
    pub ssim_window: usize,
    pub perturbations: Vec<f64>,
    pub save_images: bool,
    pub mlp: MlpConfig,
    pub verify_trials: usize,
    pub inject_alpha_sign_bug: bool,
}

pub const DEFAULT_PERTURBATIONS: [f64; 9] = [-50.0, -20.0, -10.0, -5.0, 0.0, 5.0, 10.0, 20.0, 50.0];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            source: SourceSpec::Gaussian { decay: 0.9 },
            test_source: None,
            latent_dim: 16,
            data_dim: 64,
            train_samples: 20_000,
            snr_db: (0..=8).map(|k| -10.0 + 2.5 * f64::from(k)).collect(),
            trials: 10_000,
            seed: 0,
            out_dir: PathBuf::from("out"),
            denoiser: DenoiserChoice::OracleGaussian,
            denoiser_checkpoint: None,
            codec_checkpoint: None,
            num_steps: 1,
            stochastic: false,
            phi_policy: PhiPolicy::Strict,
            peak: None,
            ssim_window: crate::metrics::SSIM_DEFAULT_WINDOW,
            perturbations: DEFAULT_PERTURBATIONS.to_vec(),
            save_images: false,
            mlp: MlpConfig::default(),
            verify_trials: 200_000,
            inject_alpha_sign_bug: false,
        }
    }
}

fn cfg_err(key: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| cfg_err(key, format!("cannot parse '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(cfg_err(key, format!("'{v}' is not finite")));
    }
    Ok(x)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(key, format!("expected true or false, got '{v}'"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

/// Comma list, or an inclusive `start:stop:step` range.
pub fn parse_grid(key: &str, v: &str) -> Result<Vec<f64>> {
    if !v.contains(':') {
        return parse_list(key, v);
    }
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(cfg_err(key, "range must be start:stop:step"));
    }
    let start = parse_f64(key, parts[0])?;
    let stop = parse_f64(key, parts[1])?;
    let step = parse_f64(key, parts[2])?;
    if !(step > 0.0) || stop < start {
        return Err(cfg_err(key, "range needs step > 0 and stop >= start"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(cfg_err(key, "range has too many points"));
    }
    Ok((0..count).map(|k| start + step * k as f64).collect())
}

fn resolve(base: &Path, v: &str) -> PathBuf {
    let p = PathBuf::from(v);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

struct SourceKeys {
    kind: Option<String>,
    decay: Option<f64>,
    weights: Option<Vec<f64>>,
    means: Option<Vec<f64>>,
    vars: Option<Vec<f64>>,
    dir: Option<PathBuf>,
}

impl SourceKeys {
    fn empty() -> Self {
        SourceKeys { kind: None, decay: None, weights: None, means: None, vars: None, dir: None }
    }

    fn is_empty(&self) -> bool {
        self.kind.is_none()
            && self.decay.is_none()
            && self.weights.is_none()
            && self.means.is_none()
            && self.vars.is_none()
            && self.dir.is_none()
    }

    fn build(self, prefix: &str) -> Result<SourceSpec> {
        let key = format!("{prefix}source");
        match self.kind.as_deref().unwrap_or("gaussian") {
            "gaussian" => Ok(SourceSpec::Gaussian { decay: self.decay.unwrap_or(0.9) }),
            "gmm" => Ok(SourceSpec::Gmm {
                weights: self.weights.unwrap_or_else(|| vec![0.5, 0.5]),
                means: self.means.unwrap_or_else(|| vec![-2.0, 2.0]),
                vars: self.vars.unwrap_or_else(|| vec![0.25, 0.25]),
            }),
            "pgm-dir" => {
                let dir = self
                    .dir
                    .ok_or_else(|| cfg_err(&format!("{prefix}pgm_dir"), "required for pgm-dir sources"))?;
                Ok(SourceSpec::PgmDir { dir })
            }
            other => Err(cfg_err(&key, format!("unknown source '{other}'"))),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text. Paths are resolved against `base`. The result is
    /// not yet validated; call [`ExperimentConfig::validate`].
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim().to_owned();
            if entries.insert(k.clone(), v.trim().to_owned()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
        }

        let mut cfg = ExperimentConfig::default();
        let mut src = SourceKeys::empty();
        let mut test = SourceKeys::empty();
        for (k, v) in &entries {
            let k = k.as_str();
            let v = v.as_str();
            let (keys, short) = match k.strip_prefix("test_") {
                Some(rest) => (&mut test, rest),
                None => (&mut src, k),
            };
            match short {
                "source" => keys.kind = Some(v.to_owned()),
                "source_decay" => keys.decay = Some(parse_f64(k, v)?),
                "gmm_weights" => keys.weights = Some(parse_list(k, v)?),
                "gmm_means" => keys.means = Some(parse_list(k, v)?),
                "gmm_vars" => keys.vars = Some(parse_list(k, v)?),
                "pgm_dir" => keys.dir = Some(resolve(base, v)),
                _ if k.starts_with("test_") => {
                    return Err(Error::Config(format!("unknown key '{k}'")))
                }
                "experiment" => cfg.experiment = Some(v.parse()?),
                "latent_dim" => cfg.latent_dim = parse_num(k, v)?,
                "data_dim" => cfg.data_dim = parse_num(k, v)?,
                "train_samples" => cfg.train_samples = parse_num(k, v)?,
                "snr_db" => cfg.snr_db = parse_grid(k, v)?,
                "trials" => cfg.trials = parse_num(k, v)?,
                "seed" => cfg.seed = parse_num(k, v)?,
                "out_dir" => cfg.out_dir = resolve(base, v),
                "denoiser" => {
                    cfg.denoiser = match v {
                        "oracle-gaussian" => DenoiserChoice::OracleGaussian,
                        "oracle-gmm" => DenoiserChoice::OracleGmm,
                        "mlp" => DenoiserChoice::Mlp,
                        "none" => DenoiserChoice::None,
                        _ => return Err(cfg_err(k, format!("unknown denoiser '{v}'"))),
                    }
                }
                "denoiser_checkpoint" => cfg.denoiser_checkpoint = Some(resolve(base, v)),
                "codec_checkpoint" => cfg.codec_checkpoint = Some(resolve(base, v)),
                "num_steps" => cfg.num_steps = parse_num(k, v)?,
                "stochastic" => cfg.stochastic = parse_bool(k, v)?,
                "phi_policy" => {
                    cfg.phi_policy = match v {
                        "strict" => PhiPolicy::Strict,
                        "clamp" => PhiPolicy::ClampToZero,
                        _ => return Err(cfg_err(k, format!("unknown policy '{v}'"))),
                    }
                }
                "peak" => cfg.peak = if v == "auto" { None } else { Some(parse_f64(k, v)?) },
                "ssim_window" => cfg.ssim_window = parse_num(k, v)?,
                "perturbations" => cfg.perturbations = parse_list(k, v)?,
                "save_images" => cfg.save_images = parse_bool(k, v)?,
                "mlp_hidden_layers" => cfg.mlp.hidden_layers = parse_num(k, v)?,
                "mlp_width" => cfg.mlp.width = parse_num(k, v)?,
                "mlp_learning_rate" => cfg.mlp.learning_rate = parse_f64(k, v)?,
                "mlp_beta1" => cfg.mlp.beta1 = parse_f64(k, v)?,
                "mlp_beta2" => cfg.mlp.beta2 = parse_f64(k, v)?,
                "mlp_adam_eps" => cfg.mlp.adam_eps = parse_f64(k, v)?,
                "mlp_batch_size" => cfg.mlp.batch_size = parse_num(k, v)?,
                "mlp_steps" => cfg.mlp.steps = parse_num(k, v)?,
                "mlp_t_min" => cfg.mlp.t_min = parse_f64(k, v)?,
                "verify_trials" => cfg.verify_trials = parse_num(k, v)?,
                "inject_alpha_sign_bug" => cfg.inject_alpha_sign_bug = parse_bool(k, v)?,
                _ => return Err(Error::Config(format!("unknown key '{k}'"))),
            }
        }
        cfg.source = src.build("")?;
        if !test.is_empty() {
            cfg.test_source = Some(test.build("test_")?);
        }
        Ok(cfg)
    }

    /// Checks every field; run before any computation.
    pub fn validate(&self) -> Result<()> {
        validate_source("source", &self.source, self.data_dim)?;
        if let Some(t) = &self.test_source {
            validate_source("test_source", t, self.data_dim)?;
        }
        if self.latent_dim == 0 {
            return Err(cfg_err("latent_dim", "must be positive"));
        }
        if self.latent_dim >= self.data_dim {
            return Err(cfg_err(
                "latent_dim",
                format!("must be below data_dim ({} >= {})", self.latent_dim, self.data_dim),
            ));
        }
        if self.train_samples <= self.latent_dim {
            return Err(cfg_err("train_samples", "must exceed latent_dim"));
        }
        if self.snr_db.is_empty() {
            return Err(cfg_err("snr_db", "grid is empty"));
        }
        if self.trials == 0 {
            return Err(cfg_err("trials", "must be at least 1"));
        }
        if self.num_steps == 0 {
            return Err(cfg_err("num_steps", "must be at least 1"));
        }
        if let Some(p) = self.peak {
            if !(p > 0.0) {
                return Err(cfg_err("peak", "must be positive"));
            }
        }
        if self.ssim_window == 0 {
            return Err(cfg_err("ssim_window", "must be positive"));
        }
        if self.perturbations.is_empty() {
            return Err(cfg_err("perturbations", "list is empty"));
        }
        if self.perturbations.iter().any(|p| *p <= -100.0) {
            return Err(cfg_err("perturbations", "values must exceed -100"));
        }
        if self.verify_trials == 0 {
            return Err(cfg_err("verify_trials", "must be at least 1"));
        }
        self.mlp.validate()?;
        if matches!(self.source, SourceSpec::PgmDir { .. }) {
            let side = image_side(self.data_dim)
                .ok_or_else(|| cfg_err("data_dim", "pgm-dir sources need a perfect-square data_dim"))?;
            if side < self.ssim_window {
                return Err(cfg_err("ssim_window", format!("larger than the {side}x{side} patch")));
            }
        }
        match self.denoiser {
            DenoiserChoice::Mlp if self.denoiser_checkpoint.is_none() => {
                return Err(cfg_err("denoiser_checkpoint", "required when denoiser = mlp"));
            }
            DenoiserChoice::OracleGmm if matches!(self.source, SourceSpec::PgmDir { .. }) => {
                return Err(cfg_err("denoiser", "oracle-gmm needs a synthetic training source"));
            }
            _ => {}
        }
        for (key, p) in [
            ("denoiser_checkpoint", &self.denoiser_checkpoint),
            ("codec_checkpoint", &self.codec_checkpoint),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(cfg_err(key, format!("{} does not exist", p.display())));
                }
            }
        }
        if self.experiment == Some(ExperimentKind::OodSweep) && self.test_source.is_none() {
            return Err(cfg_err("test_source", "required for ood-sweep"));
        }
        Ok(())
    }
}

fn validate_source(key: &str, s: &SourceSpec, data_dim: usize) -> Result<()> {
    match s {
        SourceSpec::Gaussian { decay } => {
            if !(*decay > 0.0 && *decay <= 1.0) {
                return Err(cfg_err(key, "gaussian decay must lie in (0, 1]"));
            }
            if decay.powi(data_dim.saturating_sub(1) as i32) < 1e-300 {
                return Err(cfg_err(key, "gaussian decay underflows over data_dim"));
            }
        }
        SourceSpec::Gmm { weights, means, vars } => {
            if weights.is_empty() || weights.len() != means.len() || weights.len() != vars.len() {
                return Err(cfg_err(key, "gmm weights, means and vars need equal, non-zero length"));
            }
            if weights.iter().any(|w| !(*w > 0.0)) {
                return Err(cfg_err(key, "gmm weights must be positive"));
            }
            if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(cfg_err(key, "gmm weights must sum to 1"));
            }
            if vars.iter().any(|v| !(*v > 0.0)) {
                return Err(cfg_err(key, "gmm variances must be positive"));
            }
        }
        SourceSpec::PgmDir { dir } => {
            if !dir.is_dir() {
                return Err(cfg_err(key, format!("{} is not a directory", dir.display())));
            }
        }
    }
    Ok(())
}

/// Side of the square image a data vector of length `n` reshapes to.
pub fn image_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn parses_keys_and_comments() {
        let cfg = parse(
            "# sweep\nexperiment = sensitivity\nsource = gmm  # mixture\n\
             gmm_means = -4, 4\nsnr_db = -5,0,5\ntrials = 7\nout_dir = res\n\
             test_source = gaussian\ntest_source_decay = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, Some(ExperimentKind::Sensitivity));
        assert_eq!(
            cfg.source,
            SourceSpec::Gmm { weights: vec![0.5, 0.5], means: vec![-4.0, 4.0], vars: vec![0.25, 0.25] }
        );
        assert_eq!(cfg.snr_db, vec![-5.0, 0.0, 5.0]);
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("/base/res"));
        assert_eq!(cfg.test_source, Some(SourceSpec::Gaussian { decay: 0.5 }));
        cfg.validate().unwrap();
    }

    #[test]
    fn range_grid_is_inclusive() {
        let g = parse_grid("snr_db", "-10:10:2.5").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], -10.0);
        assert_eq!(g[8], 10.0);
        assert!(parse_grid("snr_db", "0:1:0").is_err());
        assert!(parse_grid("snr_db", "1:0:1").is_err());
    }

    #[test]
    fn every_bad_config_is_named() {
        let cases = [
            ("bogus = 1", "bogus"),
            ("test_bogus = 1", "test_bogus"),
            ("trials = 0", "trials"),
            ("trials = -3", "trials"),
            ("latent_dim = 64", "latent_dim"),
            ("snr_db = 1, nan", "snr_db"),
            ("denoiser = mlp", "denoiser_checkpoint"),
            ("source = gmm\ngmm_weights = 0.3, 0.3", "source"),
            ("source = pgm-dir", "pgm_dir"),
            ("source = pgm-dir\npgm_dir = /definitely/not/here", "source"),
            ("experiment = ood-sweep", "test_source"),
            ("experiment = fly", "fly"),
            ("stochastic = maybe", "stochastic"),
            ("num_steps = 0", "num_steps"),
            ("perturbations = -100", "perturbations"),
            ("mlp_learning_rate = 0", "mlp"),
            ("peak = -1", "peak"),
            ("trials = 1\ntrials = 2", "duplicate"),
            ("no equals sign", "line 1"),
        ];
        for (text, needle) in cases {
            let err = parse(text).and_then(|c| c.validate().map(|_| c)).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
            assert!(err.to_string().contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn square_sides() {
        assert_eq!(image_side(64), Some(8));
        assert_eq!(image_side(1), Some(1));
        assert_eq!(image_side(50), None);
    }
}
