//! Codec and denoiser checkpoints stored as `LTNS1` containers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::codec::LinearCodec;
use crate::denoise::{Layer, MlpConfig, MlpPredictor};
use crate::error::{Error, Result};

use super::tensor::{load_tensor, save_tensor, Tensor, TensorContainer};

fn matrix_tensor(m: &DMatrix<f64>) -> Tensor {
    // nalgebra is column-major; the container is row-major.
    let data: Vec<f64> = m.transpose().iter().copied().collect();
    Tensor::from_f64(vec![m.nrows(), m.ncols()], &data).expect("shape matches")
}

fn tensor_matrix(c: &TensorContainer, name: &str) -> Result<DMatrix<f64>> {
    let t = c.require(name)?;
    match t.dims() {
        [r, k] => Ok(DMatrix::from_row_slice(*r, *k, &t.to_f64())),
        d => Err(Error::InvalidInput(format!("section '{name}' has shape {d:?}, expected a matrix"))),
    }
}

fn tensor_vector(c: &TensorContainer, name: &str) -> Result<DVector<f64>> {
    let t = c.require(name)?;
    if t.dims().len() != 1 {
        return Err(Error::InvalidInput(format!("section '{name}' is not a vector")));
    }
    Ok(DVector::from_vec(t.to_f64()))
}

pub fn codec_to_container(codec: &LinearCodec) -> TensorContainer {
    let mut c = TensorContainer::new();
    c.insert("codec.basis", matrix_tensor(codec.basis()));
    c.insert("codec.mean", Tensor::vector(codec.data_mean().as_slice()));
    c.insert("codec.scale", Tensor::vector(codec.latent_scale().as_slice()));
    c.insert("codec.gamma_bar", Tensor::scalar(codec.gamma_bar()));
    c
}

pub fn codec_from_container(c: &TensorContainer) -> Result<LinearCodec> {
    let gamma = c.require("codec.gamma_bar")?.to_f64();
    let gamma_bar = *gamma
        .first()
        .ok_or_else(|| Error::InvalidInput("section 'codec.gamma_bar' is empty".into()))?;
    LinearCodec::from_parts(
        tensor_matrix(c, "codec.basis")?,
        tensor_vector(c, "codec.mean")?,
        tensor_vector(c, "codec.scale")?,
        gamma_bar,
    )
}

pub fn save_codec(path: impl AsRef<Path>, codec: &LinearCodec) -> Result<()> {
    save_tensor(path, &codec_to_container(codec))
}

pub fn load_codec(path: impl AsRef<Path>) -> Result<LinearCodec> {
    codec_from_container(&load_tensor(path)?)
}

pub fn mlp_to_container(model: &MlpPredictor) -> TensorContainer {
    let cfg = model.config();
    let mut c = TensorContainer::new();
    c.insert(
        "mlp.config",
        Tensor::vector(&[
            model.dim() as f64,
            cfg.hidden_layers as f64,
            cfg.width as f64,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            cfg.batch_size as f64,
            cfg.steps as f64,
            cfg.t_min,
        ]),
    );
    for (i, layer) in model.layers().iter().enumerate() {
        c.insert(format!("mlp.layer{i}.weight"), matrix_tensor(&layer.weight));
        c.insert(format!("mlp.layer{i}.bias"), Tensor::vector(layer.bias.as_slice()));
    }
    c
}

pub fn mlp_from_container(c: &TensorContainer) -> Result<MlpPredictor> {
    let meta = c.require("mlp.config")?.to_f64();
    if meta.len() != 10 {
        return Err(Error::InvalidInput("section 'mlp.config' needs 10 entries".into()));
    }
    let count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidInput(format!("section 'mlp.config' holds non-integer count {v}")))
        }
    };
    let dim = count(meta[0])?;
    let config = MlpConfig {
        hidden_layers: count(meta[1])?,
        width: count(meta[2])?,
        learning_rate: meta[3],
        beta1: meta[4],
        beta2: meta[5],
        adam_eps: meta[6],
        batch_size: count(meta[7])?,
        steps: count(meta[8])?,
        t_min: meta[9],
    };
    let layers = (0..=config.hidden_layers)
        .map(|i| {
            Ok(Layer {
                weight: tensor_matrix(c, &format!("mlp.layer{i}.weight"))?,
                bias: tensor_vector(c, &format!("mlp.layer{i}.bias"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MlpPredictor::from_layers(dim, config, layers)
}

pub fn save_mlp(path: impl AsRef<Path>, model: &MlpPredictor) -> Result<()> {
    save_tensor(path, &mlp_to_container(model))
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpPredictor> {
    mlp_from_container(&load_tensor(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::NoisePredictor;
    use crate::latent::LatentVector;
    use crate::rng::{rng_from_seed, standard_normal_vector};
    use crate::schedule::Timestep;

    #[test]
    fn codec_round_trip_to_f32_precision() {
        let mut rng = rng_from_seed(1);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| standard_normal_vector(6, &mut rng).into_inner())
            .collect();
        let codec = LinearCodec::fit(&data, 3).unwrap();
        let back = codec_from_container(&codec_to_container(&codec)).unwrap();
        assert_eq!(back.basis().shape(), (3, 6));
        let z0 = codec.encode(&data[0]).unwrap();
        let z1 = back.encode(&data[0]).unwrap();
        for (a, b) in z0.iter().zip(z1.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        // a second save of the loaded codec is byte-stable
        let b1 = codec_to_container(&back).to_bytes().unwrap();
        let again = codec_from_container(&TensorContainer::from_bytes(&b1, Path::new("m")).unwrap()).unwrap();
        assert_eq!(codec_to_container(&again).to_bytes().unwrap(), b1);
    }

    #[test]
    fn mlp_round_trip() {
        let mut rng = rng_from_seed(2);
        let cfg = MlpConfig { hidden_layers: 2, width: 5, ..MlpConfig::default() };
        let model = MlpPredictor::new_random(3, cfg.clone(), &mut rng).unwrap();
        let back = mlp_from_container(&mlp_to_container(&model)).unwrap();
        assert_eq!(back.config().width, 5);
        assert_eq!(back.parameter_count(), model.parameter_count());
        let x = LatentVector::new(vec![0.3, -0.2, 1.0]);
        let t = Timestep::new(0.4).unwrap();
        let a = model.predict(&x, t).unwrap();
        let b = back.predict(&x, t).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn missing_layer_is_reported() {
        let mut rng = rng_from_seed(3);
        let model = MlpPredictor::new_random(2, MlpConfig { width: 3, ..MlpConfig::default() }, &mut rng).unwrap();
        let full = mlp_to_container(&model);
        let mut partial = TensorContainer::new();
        for (name, t) in full.sections() {
            if name != "mlp.layer1.bias" {
                partial.insert(name.clone(), t.clone());
            }
        }
        let err = mlp_from_container(&partial).unwrap_err();
        assert!(err.to_string().contains("mlp.layer1.bias"));
    }
}
