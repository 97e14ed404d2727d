//! A small fully connected epsilon-predictor with hand-written backprop.
//!
//! Input is `[x_t, t, sqrt(t), 1 - t]`, hidden layers use `tanh`, and the
//! output layer is linear with the latent dimension. Training minimizes
//! `E || eps - eps_hat((1 - t) x_0 + sqrt(t) eps, t) ||^2` with Adam.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::latent::LatentVector;
use crate::rng::{standard_normal, standard_normal_vector};
use crate::schedule::{forward_with_noise, Timestep};

use super::NoisePredictor;

pub const TIME_EMBED_WIDTH: usize = 3;

pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_WIDTH] {
    [t, t.sqrt(), 1.0 - t]
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Lower end of the training timestep range `(t_min, 1]`.
    pub t_min: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: 2,
            width: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            steps: 20_000,
            t_min: 1e-3,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("mlp: {what}")));
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam epsilon must be positive");
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return bad("t_min must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPredictor {
    dim: usize,
    layers: Vec<Layer>,
    config: MlpConfig,
}

/// One training example: the corrupted input, its timestep, and the noise
/// that produced it (the regression target).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x_t: LatentVector,
    pub t: f64,
    pub eps: LatentVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub model: MlpPredictor,
    /// Mini-batch loss at every step.
    pub loss_trace: Vec<f64>,
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(l.bias.as_slice());
    }
    out
}

fn layer_sizes(dim: usize, config: &MlpConfig) -> Vec<(usize, usize)> {
    let mut sizes = Vec::with_capacity(config.hidden_layers + 1);
    let mut fan_in = dim + TIME_EMBED_WIDTH;
    for _ in 0..config.hidden_layers {
        sizes.push((config.width, fan_in));
        fan_in = config.width;
    }
    sizes.push((dim, fan_in));
    sizes
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl MlpPredictor {
    /// Glorot-uniform hidden layers and a zero output layer, so the fresh
    /// model predicts `eps_hat = 0` everywhere.
    pub fn new<R: Rng + ?Sized>(dim: usize, config: MlpConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::new_random(dim, config, rng)?;
        let out = model.layers.last_mut().expect("at least one layer");
        out.weight.fill(0.0);
        out.bias.fill(0.0);
        Ok(model)
    }

    /// Every layer (biases included) drawn at random; used for gradient checks.
    pub fn new_random<R: Rng + ?Sized>(dim: usize, config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Config("mlp: latent dimension must be positive".into()));
        }
        let layers = layer_sizes(dim, &config)
            .into_iter()
            .map(|(rows, cols)| Layer {
                weight: glorot(rows, cols, rng),
                bias: DVector::from_fn(rows, |_, _| 0.1 * standard_normal(rng)),
            })
            .collect();
        Ok(MlpPredictor { dim, layers, config })
    }

    pub fn from_layers(dim: usize, config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let sizes = layer_sizes(dim, &config);
        if sizes.len() != layers.len() {
            return Err(Error::Config(format!(
                "mlp: expected {} layers, got {}",
                sizes.len(),
                layers.len()
            )));
        }
        for (i, ((rows, cols), l)) in sizes.iter().zip(&layers).enumerate() {
            if l.weight.shape() != (*rows, *cols) || l.bias.len() != *rows {
                return Err(Error::Config(format!(
                    "mlp: layer {i} has shape {:?}/{}, expected {rows}x{cols}",
                    l.weight.shape(),
                    l.bias.len()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("mlp: layer {i} has non-finite parameters")));
            }
        }
        Ok(MlpPredictor { dim, layers, config })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.parameter_count(), params.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn input_matrix<'a>(&self, rows: impl ExactSizeIterator<Item = (&'a LatentVector, f64)>) -> Result<DMatrix<f64>> {
        let cols = rows.len();
        let mut input = DMatrix::zeros(self.dim + TIME_EMBED_WIDTH, cols);
        for (j, (x, t)) in rows.enumerate() {
            check_dim(self.dim, x.dim())?;
            let mut col = input.column_mut(j);
            for i in 0..self.dim {
                col[i] = x[i];
            }
            for (k, e) in time_embedding(t).iter().enumerate() {
                col[self.dim + k] = *e;
            }
        }
        Ok(input)
    }

    /// Returns the input followed by every hidden activation, and the output.
    fn forward(&self, input: DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(input);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weight * acts.last().expect("input pushed");
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if i == last {
                return (acts, z);
            }
            z.apply(|v| *v = v.tanh());
            acts.push(z);
        }
        unreachable!("loop returns at the output layer")
    }

    pub fn predict_batch(&self, inputs: &[(LatentVector, f64)]) -> Result<Vec<LatentVector>> {
        let input = self.input_matrix(inputs.iter().map(|(x, t)| (x, *t)))?;
        let (_, out) = self.forward(input);
        Ok(out
            .column_iter()
            .map(|c| LatentVector(c.iter().copied().collect()))
            .collect())
    }
}

impl NoisePredictor for MlpPredictor {
    fn predict(&self, x_t: &LatentVector, t: Timestep) -> Result<LatentVector> {
        check_dim(self.dim, x_t.dim())?;
        let input = self.input_matrix(std::iter::once((x_t, t.get())))?;
        let (_, out) = self.forward(input);
        Ok(LatentVector(out.column(0).iter().copied().collect()))
    }
}

/// Exact gradients of the batch loss `mean_b || eps_hat_b - eps_b ||^2`.
pub fn mlp_gradient(model: &MlpPredictor, batch: &[TrainingExample]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let input = model.input_matrix(batch.iter().map(|e| (&e.x_t, e.t)))?;
    let (acts, out) = model.forward(input);
    let b = batch.len() as f64;

    let mut target = DMatrix::zeros(model.dim, batch.len());
    for (j, e) in batch.iter().enumerate() {
        check_dim(model.dim, e.eps.dim())?;
        target.column_mut(j).copy_from_slice(&e.eps);
    }
    let residual = out - target;
    let loss = residual.norm_squared() / b;

    let mut delta = residual * (2.0 / b);
    let mut grads: Vec<Layer> = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate().rev() {
        let a_prev = &acts[i];
        let weight = &delta * a_prev.transpose();
        let bias = delta.column_sum();
        grads.push(Layer { weight, bias });
        if i > 0 {
            let mut back = l.weight.transpose() * &delta;
            // a_prev = tanh(pre), d tanh = 1 - a^2
            back.zip_apply(a_prev, |g, a| *g *= 1.0 - a * a);
            delta = back;
        }
    }
    grads.reverse();
    Ok(Gradients { loss, layers: grads })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &MlpConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Draws a fresh training example from a clean latent.
pub fn sample_example<R: Rng + ?Sized>(x0: &LatentVector, t_min: f64, rng: &mut R) -> TrainingExample {
    // Uniform on (t_min, 1]: 1 - U[0, 1) * (1 - t_min).
    let t = 1.0 - rng.random::<f64>() * (1.0 - t_min);
    let eps = standard_normal_vector(x0.dim(), rng);
    let x_t = forward_with_noise(x0, Timestep::new(t).expect("t in (0, 1]"), &eps)
        .expect("matching dimensions");
    TrainingExample { x_t, t, eps }
}

pub fn mlp_train<R: Rng + ?Sized>(
    dataset: &[LatentVector],
    config: &MlpConfig,
    rng: &mut R,
) -> Result<TrainedMlp> {
    let first = dataset.first().ok_or(Error::EmptyBatch)?;
    let dim = first.dim();
    for x in dataset {
        check_dim(dim, x.dim())?;
        x.ensure_finite("training latent")?;
    }
    let mut model = MlpPredictor::new(dim, config.clone(), rng)?;
    let mut adam = Adam::new(model.parameter_count());
    let mut params = model.flat_params();
    let mut loss_trace = Vec::with_capacity(config.steps);
    let mut batch = Vec::with_capacity(config.batch_size);

    for step in 0..config.steps {
        batch.clear();
        for _ in 0..config.batch_size {
            let x0 = &dataset[rng.random_range(0..dataset.len())];
            batch.push(sample_example(x0, config.t_min, rng));
        }
        let grads = mlp_gradient(&model, &batch)?;
        if !grads.loss.is_finite() {
            return Err(Error::Training { step, loss: grads.loss });
        }
        loss_trace.push(grads.loss);
        adam.update(&mut params, &grads.flatten(), config);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { step, loss: f64::NAN });
        }
        model.set_flat_params(&params)?;
    }
    Ok(TrainedMlp { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny() -> MlpConfig {
        MlpConfig {
            hidden_layers: 2,
            width: 4,
            ..MlpConfig::default()
        }
    }

    fn random_batch(dim: usize, n: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let x0 = standard_normal_vector(dim, &mut rng);
                sample_example(&x0, 1e-3, &mut rng)
            })
            .collect()
    }

    fn loss_of(model: &MlpPredictor, batch: &[TrainingExample]) -> f64 {
        mlp_gradient(model, batch).unwrap().loss
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let mut rng = rng_from_seed(20);
        let model = MlpPredictor::new(3, tiny(), &mut rng).unwrap();
        let out = model
            .predict(&LatentVector::new(vec![1.0, -4.0, 2.0]), Timestep::new(0.3).unwrap())
            .unwrap();
        assert_eq!(out, LatentVector::zeros(3));
    }

    #[test]
    fn predictions_are_deterministic() {
        let mut rng = rng_from_seed(21);
        let model = MlpPredictor::new_random(3, tiny(), &mut rng).unwrap();
        let x = LatentVector::new(vec![0.1, 0.2, 0.3]);
        let t = Timestep::new(0.7).unwrap();
        let a = model.predict(&x, t).unwrap();
        let b = model.predict(&x, t).unwrap();
        assert_eq!(a, b);
        assert!(model.predict(&LatentVector::zeros(2), t).is_err());
    }

    #[test]
    fn batch_and_single_predictions_agree() {
        let mut rng = rng_from_seed(22);
        let model = MlpPredictor::new_random(2, tiny(), &mut rng).unwrap();
        let inputs = vec![
            (LatentVector::new(vec![0.5, -0.5]), 0.2),
            (LatentVector::new(vec![1.5, 0.0]), 0.9),
        ];
        let batch = model.predict_batch(&inputs).unwrap();
        for ((x, t), b) in inputs.iter().zip(&batch) {
            let single = model.predict(x, Timestep::new(*t).unwrap()).unwrap();
            for (u, v) in single.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5u64 {
            let mut rng = rng_from_seed(100 + seed);
            let mut model = MlpPredictor::new_random(2, tiny(), &mut rng).unwrap();
            let batch = random_batch(2, 6, 200 + seed);
            let analytic = mlp_gradient(&model, &batch).unwrap().flatten();
            let base = model.flat_params();
            let h = 1e-5;
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] = base[i] + h;
                model.set_flat_params(&p).unwrap();
                let up = loss_of(&model, &batch);
                p[i] = base[i] - h;
                model.set_flat_params(&p).unwrap();
                let down = loss_of(&model, &batch);
                let numeric = (up - down) / (2.0 * h);
                let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
                let rel = (analytic[i] - numeric).abs() / scale;
                assert!(rel <= 1e-4, "seed {seed} param {i}: {} vs {numeric}", analytic[i]);
            }
            model.set_flat_params(&base).unwrap();
        }
    }

    #[test]
    fn perfect_predictions_have_zero_gradient() {
        let mut rng = rng_from_seed(23);
        let model = MlpPredictor::new_random(2, tiny(), &mut rng).unwrap();
        let mut batch = random_batch(2, 4, 24);
        for e in &mut batch {
            e.eps = model.predict(&e.x_t, Timestep::new(e.t).unwrap()).unwrap();
        }
        let g = mlp_gradient(&model, &batch).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let mut rng = rng_from_seed(25);
        let model = MlpPredictor::new_random(2, tiny(), &mut rng).unwrap();
        let batch = random_batch(2, 5, 26);
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let a = mlp_gradient(&model, &batch).unwrap().flatten();
        let b = mlp_gradient(&model, &doubled).unwrap().flatten();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!(mlp_gradient(&model, &[]).is_err());
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let data = vec![LatentVector::new(vec![1.0, 0.0]); 4];
        let cfg = MlpConfig { steps: 0, ..tiny() };
        let trained = mlp_train(&data, &cfg, &mut rng_from_seed(27)).unwrap();
        let fresh = MlpPredictor::new(2, cfg, &mut rng_from_seed(27)).unwrap();
        assert_eq!(trained.model, fresh);
        assert!(trained.loss_trace.is_empty());
        assert!(mlp_train(&[], &tiny(), &mut rng_from_seed(27)).is_err());
    }

    #[test]
    fn initial_loss_is_dimension() {
        let mut rng = rng_from_seed(28);
        let d = 8;
        let model = MlpPredictor::new(d, tiny(), &mut rng).unwrap();
        let batch = random_batch(d, 20_000, 29);
        let loss = loss_of(&model, &batch);
        assert!((loss - d as f64).abs() / (d as f64) < 0.02, "{loss}");
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![LatentVector::new(vec![1.0, -1.0])];
        let cfg = MlpConfig { steps: 5, batch_size: 2, learning_rate: 1e300, ..tiny() };
        let err = mlp_train(&data, &cfg, &mut rng_from_seed(30));
        assert!(matches!(err, Err(Error::Training { .. })), "{err:?}");
    }

    #[test]
    fn short_training_beats_trivial_predictor() {
        let mut rng = rng_from_seed(31);
        let d = 4;
        let data: Vec<_> = (0..2000).map(|_| standard_normal_vector(d, &mut rng)).collect();
        let cfg = MlpConfig { width: 32, steps: 1500, batch_size: 64, ..MlpConfig::default() };
        let trained = mlp_train(&data, &cfg, &mut rng).unwrap();
        let held_out = random_batch(d, 4000, 32);
        let loss = loss_of(&trained.model, &held_out);
        assert!(loss < 0.9 * d as f64, "{loss}");
    }
}
