//! Python bindings for the `latent_rx` receiver.
//!
//! Latent vectors cross the boundary as `list[float]`, batches as
//! `list[list[float]]`. Random draws take an explicit `seed`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use latent_rx::adapt::{self, ChannelSpec, PhiPolicy};
use latent_rx::channel;
use latent_rx::denoise::{denoise_with_params, GmmComponent, NoisePredictor};
use latent_rx::harness::checkpoint;
use latent_rx::harness::config::{ExperimentConfig, ExperimentKind};
use latent_rx::harness::experiment::{
    ood_table, run_ood_sweep, run_sensitivity, run_snr_sweep, sensitivity_table, sweep_table,
};
use latent_rx::harness::verify::{run_verify_theory, verify_table};
use latent_rx::rng::rng_from_seed;
use latent_rx::schedule::{self, Timestep};
use latent_rx::{Error, LatentVector};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for latent_rx::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn spec(gamma: f64, sigma2: f64, y_energy: Option<f64>) -> PyResult<ChannelSpec> {
    match y_energy {
        Some(y) => ChannelSpec::new(gamma, sigma2, y),
        None => ChannelSpec::consistent(gamma, sigma2),
    }
    .py()
}

fn policy(clamp: bool) -> PhiPolicy {
    if clamp {
        PhiPolicy::ClampToZero
    } else {
        PhiPolicy::Strict
    }
}

/// Timestep solving the matched-variance condition for a given `phi`.
#[pyfunction]
fn timestep_for_phi(phi: f64) -> PyResult<f64> {
    Ok(adapt::timestep_for_phi(phi).py()?.get())
}

/// Timestep for unit-energy latents at noise variance `sigma2`.
#[pyfunction]
fn timestep_simplified(sigma2: f64) -> PyResult<f64> {
    Ok(adapt::timestep_simplified(sigma2).py()?.get())
}

#[pyfunction]
#[pyo3(signature = (gamma, sigma2, y_energy=None, clamp=false))]
fn compute_phi(gamma: f64, sigma2: f64, y_energy: Option<f64>, clamp: bool) -> PyResult<f64> {
    adapt::compute_phi_with(&spec(gamma, sigma2, y_energy)?, policy(clamp)).py()
}

#[pyfunction]
#[pyo3(signature = (gamma, sigma2, t, y_energy=None))]
fn scaling_factor(gamma: f64, sigma2: f64, t: f64, y_energy: Option<f64>) -> PyResult<f64> {
    adapt::scaling_factor(&spec(gamma, sigma2, y_energy)?, Timestep::new(t).py()?).py()
}

/// Returns `(t_star, alpha, phi)`. Without `y_energy` the received energy
/// is taken to be `gamma + sigma2`.
#[pyfunction]
#[pyo3(signature = (gamma, sigma2, y_energy=None, clamp=false))]
fn receiver_params(
    gamma: f64,
    sigma2: f64,
    y_energy: Option<f64>,
    clamp: bool,
) -> PyResult<(f64, f64, f64)> {
    let p = adapt::receiver_params_with(&spec(gamma, sigma2, y_energy)?, policy(clamp)).py()?;
    Ok((p.t_star.get(), p.alpha, p.phi))
}

#[pyfunction]
#[pyo3(signature = (snr_db, gamma=1.0))]
fn snr_db_to_sigma2(snr_db: f64, gamma: f64) -> PyResult<f64> {
    channel::snr_db_to_sigma2(snr_db, gamma).py()
}

#[pyfunction]
#[pyo3(signature = (sigma2, gamma=1.0))]
fn sigma2_to_snr_db(sigma2: f64, gamma: f64) -> PyResult<f64> {
    channel::sigma2_to_snr_db(sigma2, gamma).py()
}

fn latents(batch: Vec<Vec<f64>>) -> Vec<LatentVector> {
    batch.into_iter().map(LatentVector::new).collect()
}

fn plain(batch: Vec<LatentVector>) -> Vec<Vec<f64>> {
    batch.into_iter().map(LatentVector::into_inner).collect()
}

/// Per-dimension energy of a batch.
#[pyfunction]
fn measure_energy(batch: Vec<Vec<f64>>) -> PyResult<f64> {
    channel::measure_energy(&latents(batch)).py()
}

/// Sends a batch through AWGN; returns `(ys, y_energy)` where `y_energy`
/// is measured over the whole batch.
#[pyfunction]
#[pyo3(signature = (zs, sigma2, seed=0))]
fn transmit(zs: Vec<Vec<f64>>, sigma2: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let obs = channel::transmit_batch(&latents(zs), sigma2, &mut rng_from_seed(seed)).py()?;
    let y_energy = obs.first().map_or(f64::NAN, |o| o.spec.y_energy);
    Ok((obs.into_iter().map(|o| o.y.into_inner()).collect(), y_energy))
}

/// Returns `(x_t, eps)`.
#[pyfunction]
#[pyo3(signature = (x0, t, seed=0))]
fn forward_corrupt(x0: Vec<f64>, t: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = schedule::forward_corrupt(&x0.into(), Timestep::new(t).py()?, &mut rng_from_seed(seed)).py()?;
    Ok((s.x_t.into_inner(), s.eps.into_inner()))
}

/// Diagonal Gaussian prior with an exact posterior-mean noise predictor.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct GaussianPrior(latent_rx::GaussianPrior);

#[pymethods]
impl GaussianPrior {
    #[new]
    fn new(mean: Vec<f64>, var: Vec<f64>) -> PyResult<Self> {
        Ok(Self(latent_rx::GaussianPrior::new(mean, var).py()?))
    }

    #[staticmethod]
    fn standard(dim: usize) -> Self {
        Self(latent_rx::GaussianPrior::standard(dim))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn predict(&self, x_t: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.0.predict(&x_t.into(), Timestep::new(t).py()?).py()?.into_inner())
    }

    fn posterior_mean(&self, x_t: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.0.posterior_mean(&x_t.into(), Timestep::new(t).py()?).py()?.into_inner())
    }
}

/// Mixture of diagonal Gaussians with an exact posterior-mean predictor.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct GmmPrior(latent_rx::GmmPrior);

#[pymethods]
impl GmmPrior {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> PyResult<Self> {
        if weights.len() != means.len() || weights.len() != vars.len() {
            return Err(PyValueError::new_err(
                "weights, means and vars need one entry per component",
            ));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(vars)
            .map(|((weight, mean), var)| GmmComponent { weight, mean, var })
            .collect();
        Ok(Self(latent_rx::GmmPrior::new(components).py()?))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn predict(&self, x_t: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.0.predict(&x_t.into(), Timestep::new(t).py()?).py()?.into_inner())
    }

    fn posterior_mean(&self, x_t: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.0.posterior_mean(&x_t.into(), Timestep::new(t).py()?).py()?.into_inner())
    }

    fn responsibilities(&self, x_t: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        self.0.responsibilities(&x_t.into(), Timestep::new(t).py()?).py()
    }
}

#[derive(FromPyObject)]
enum Prior {
    Gaussian(GaussianPrior),
    Gmm(GmmPrior),
}

impl Prior {
    fn predictor(&self) -> &dyn NoisePredictor {
        match self {
            Prior::Gaussian(p) => &p.0,
            Prior::Gmm(p) => &p.0,
        }
    }
}

/// Scales each received vector by `alpha` and runs the reverse chain from
/// `t_star` with the given prior. Receiver parameters come from `gamma`,
/// `sigma2` and the batch's measured energy unless `y_energy` is given.
#[pyfunction]
#[pyo3(signature = (ys, gamma, sigma2, prior, num_steps=1, stochastic=false, seed=0, y_energy=None))]
#[allow(clippy::too_many_arguments)]
fn denoise(
    py: Python<'_>,
    ys: Vec<Vec<f64>>,
    gamma: f64,
    sigma2: f64,
    prior: Prior,
    num_steps: usize,
    stochastic: bool,
    seed: u64,
    y_energy: Option<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let ys = latents(ys);
    let y_energy = match y_energy {
        Some(e) => e,
        None => channel::measure_energy(&ys).py()?,
    };
    let params = adapt::receiver_params(&ChannelSpec::new(gamma, sigma2, y_energy).py()?).py()?;
    py.detach(|| {
        let mut rng = rng_from_seed(seed);
        ys.iter()
            .map(|y| denoise_with_params(y, &params, prior.predictor(), num_steps, stochastic, &mut rng))
            .collect::<latent_rx::Result<Vec<_>>>()
            .map(plain)
    })
    .py()
}

/// PCA codec with latents scaled to unit per-dimension energy.
#[pyclass(frozen)]
struct LinearCodec(latent_rx::LinearCodec);

#[pymethods]
impl LinearCodec {
    #[staticmethod]
    fn fit(samples: Vec<Vec<f64>>, latent_dim: usize) -> PyResult<Self> {
        Ok(Self(latent_rx::LinearCodec::fit(&samples, latent_dim).py()?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(checkpoint::load_codec(path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_codec(path, &self.0).py()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    #[getter]
    fn data_dim(&self) -> usize {
        self.0.data_dim()
    }

    #[getter]
    fn gamma_bar(&self) -> f64 {
        self.0.gamma_bar()
    }

    fn encode(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.encode(&x).py()?.into_inner())
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.decode(&z.into()).py()
    }
}

/// Runs `snr-sweep`, `sensitivity`, `ood-sweep` or `verify-theory` and
/// returns the CSV text. Nothing is written to disk.
#[pyfunction]
#[pyo3(signature = (experiment, config=None, seed=None))]
fn run_experiment(
    py: Python<'_>,
    experiment: &str,
    config: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<String> {
    let kind: ExperimentKind = experiment.parse().py()?;
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p).py()?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(kind);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().py()?;
    let table = py
        .detach(|| match kind {
            ExperimentKind::SnrSweep => run_snr_sweep(&cfg).map(|r| sweep_table(&r)),
            ExperimentKind::Sensitivity => run_sensitivity(&cfg).map(|r| sensitivity_table(&r)),
            ExperimentKind::OodSweep => run_ood_sweep(&cfg).map(|r| ood_table(&r)),
            ExperimentKind::VerifyTheory => run_verify_theory(&cfg).map(|r| verify_table(&r)),
            other => Err(Error::Config(format!(
                "experiment: {other} writes checkpoints; use the command-line tool"
            ))),
        })
        .py()?;
    String::from_utf8(table.to_bytes().py()?).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "latent_rx")]
fn latent_rx_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(timestep_for_phi, m)?)?;
    m.add_function(wrap_pyfunction!(timestep_simplified, m)?)?;
    m.add_function(wrap_pyfunction!(compute_phi, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_factor, m)?)?;
    m.add_function(wrap_pyfunction!(receiver_params, m)?)?;
    m.add_function(wrap_pyfunction!(snr_db_to_sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(sigma2_to_snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(measure_energy, m)?)?;
    m.add_function(wrap_pyfunction!(transmit, m)?)?;
    m.add_function(wrap_pyfunction!(forward_corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(denoise, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<GaussianPrior>()?;
    m.add_class::<GmmPrior>()?;
    m.add_class::<LinearCodec>()?;
    Ok(())
}
