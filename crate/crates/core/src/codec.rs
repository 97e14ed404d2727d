//! Linear semantic codec: a principal-subspace encoder/decoder pair with
//! per-dimension standardization, so training latents have unit energy.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::latent::LatentVector;

/// Singular values below this fraction of the largest one count as zero.
const RANK_TOLERANCE: f64 = 1e-10;
const LOADED_ORTHONORMAL_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodec {
    /// `d x n`, orthonormal rows.
    basis: DMatrix<f64>,
    data_mean: DVector<f64>,
    latent_scale: DVector<f64>,
    gamma_bar: f64,
}

impl LinearCodec {
    /// Fits the top-`d` principal subspace of `samples` (each of length `n`).
    pub fn fit(samples: &[Vec<f64>], d: usize) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyBatch)?;
        let n = first.len();
        if d == 0 || d >= n {
            return Err(Error::Fit(format!(
                "latent dimension {d} must satisfy 0 < d < n = {n}"
            )));
        }
        if samples.len() < d + 1 {
            return Err(Error::Fit(format!(
                "need more than {d} samples to fit a {d}-dimensional subspace, got {}",
                samples.len()
            )));
        }
        let count = samples.len();
        let mut data = DMatrix::zeros(count, n);
        for (i, s) in samples.iter().enumerate() {
            check_dim(n, s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Fit(format!("sample {i} has non-finite entries")));
            }
            data.row_mut(i).copy_from_slice(s);
        }
        let mean = data.row_mean().transpose();
        for mut row in data.row_iter_mut() {
            row -= mean.transpose();
        }

        let svd = data.clone().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Fit("singular-value factorization failed".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = svd.singular_values[order[0]];
        if order.len() < d || !(top > 0.0) || svd.singular_values[order[d - 1]] <= RANK_TOLERANCE * top {
            return Err(Error::Fit(format!(
                "training data has rank below the latent dimension {d}"
            )));
        }

        let mut basis = DMatrix::zeros(d, n);
        for (r, &k) in order.iter().take(d).enumerate() {
            let mut row = v_t.row(k).into_owned();
            if let Some(lead) = row.iter().find(|v| v.abs() > 1e-12) {
                if *lead < 0.0 {
                    row = -row;
                }
            }
            basis.row_mut(r).copy_from(&row);
        }

        // Per-dimension energy of the projected training data.
        let proj = &data * basis.transpose();
        let mut latent_scale = DVector::zeros(d);
        for j in 0..d {
            let energy = proj.column(j).norm_squared() / count as f64;
            latent_scale[j] = 1.0 / energy.sqrt();
        }

        let mut codec = LinearCodec {
            basis,
            data_mean: mean,
            latent_scale,
            gamma_bar: 0.0,
        };
        let mut total = 0.0;
        for s in samples {
            total += codec.encode(s)?.squared_norm();
        }
        codec.gamma_bar = total / (count * d) as f64;
        Ok(codec)
    }

    pub fn from_parts(
        basis: DMatrix<f64>,
        data_mean: DVector<f64>,
        latent_scale: DVector<f64>,
        gamma_bar: f64,
    ) -> Result<Self> {
        let (d, n) = basis.shape();
        check_dim(n, data_mean.len())?;
        check_dim(d, latent_scale.len())?;
        if d == 0 || d >= n {
            return Err(Error::Fit(format!("basis shape {d}x{n} is not a compression")));
        }
        if latent_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Fit("latent scale must be positive and finite".into()));
        }
        if !(gamma_bar > 0.0) {
            return Err(Error::Fit(format!("gamma_bar must be positive, got {gamma_bar}")));
        }
        // Checkpoints store f32, so this is looser than the fit-time guarantee.
        let gram_err = (&basis * basis.transpose() - DMatrix::identity(d, d)).amax();
        if !(gram_err < LOADED_ORTHONORMAL_TOLERANCE) {
            return Err(Error::Fit(format!(
                "basis rows are not orthonormal (max Gram error {gram_err})"
            )));
        }
        Ok(LinearCodec {
            basis,
            data_mean,
            latent_scale,
            gamma_bar,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn data_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn data_mean(&self) -> &DVector<f64> {
        &self.data_mean
    }

    pub fn latent_scale(&self) -> &DVector<f64> {
        &self.latent_scale
    }

    /// Per-dimension energy of the encoded training corpus.
    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    /// `z = scale * (basis (x - mean))`.
    pub fn encode(&self, x: &[f64]) -> Result<LatentVector> {
        check_dim(self.data_dim(), x.len())?;
        let centered = DVector::from_column_slice(x) - &self.data_mean;
        let z = (&self.basis * centered).component_mul(&self.latent_scale);
        Ok(LatentVector(z.iter().copied().collect()))
    }

    /// `x = basis^T (z / scale) + mean`.
    pub fn decode(&self, z: &LatentVector) -> Result<Vec<f64>> {
        check_dim(self.latent_dim(), z.dim())?;
        let unscaled = DVector::from_column_slice(z).component_div(&self.latent_scale);
        let x = self.basis.tr_mul(&unscaled) + &self.data_mean;
        Ok(x.iter().copied().collect())
    }

    /// Latent image of an isotropic Gaussian `N(mean, var I)` in data space:
    /// returns the latent mean and the (exactly diagonal) latent variances.
    pub fn push_forward_isotropic(&self, mean: &[f64], var: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.encode(mean)?;
        let v = self.latent_scale.iter().map(|s| s * s * var).collect();
        Ok((m.into_inner(), v))
    }

    /// Diagonal of the latent covariance induced by a data-space covariance
    /// `diag(var)` with mean `mean`.
    pub fn push_forward_diagonal(&self, mean: &[f64], var: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.data_dim(), var.len())?;
        let m = self.encode(mean)?;
        let v = (0..self.latent_dim())
            .map(|j| {
                let row = self.basis.row(j);
                let s = self.latent_scale[j];
                s * s * row.iter().zip(var).map(|(b, v)| b * b * v).sum::<f64>()
            })
            .collect();
        Ok((m.into_inner(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal, SimRng};

    fn gaussian_samples(count: usize, n: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..n).map(|_| standard_normal(rng)).collect())
            .collect()
    }

    fn subspace_samples(count: usize, n: usize, d: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let dirs = gaussian_samples(d, n, rng);
        (0..count)
            .map(|_| {
                let coef: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
                (0..n)
                    .map(|i| 3.0 + (0..d).map(|k| coef[k] * dirs[k][i]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn basis_is_orthonormal_and_gamma_is_unit() {
        let mut rng = rng_from_seed(50);
        let data = gaussian_samples(2000, 12, &mut rng);
        let codec = LinearCodec::fit(&data, 5).unwrap();
        let gram = codec.basis() * codec.basis().transpose();
        let eye = DMatrix::<f64>::identity(5, 5);
        assert!((gram - eye).amax() < 1e-10);
        assert!((codec.gamma_bar() - 1.0).abs() < 0.01);
        for r in codec.basis().row_iter() {
            let lead = r.iter().find(|v| v.abs() > 1e-12).unwrap();
            assert!(*lead > 0.0);
        }
    }

    #[test]
    fn in_subspace_data_round_trips() {
        let mut rng = rng_from_seed(51);
        let data = subspace_samples(200, 10, 3, &mut rng);
        let codec = LinearCodec::fit(&data, 3).unwrap();
        for x in &data {
            let back = codec.decode(&codec.encode(x).unwrap()).unwrap();
            assert!(sq_dist(x, &back).sqrt() < 1e-8);
        }
    }

    #[test]
    fn isotropic_residual_energy() {
        let mut rng = rng_from_seed(52);
        let (n, d) = (64, 16);
        let train = gaussian_samples(20_000, n, &mut rng);
        let codec = LinearCodec::fit(&train, d).unwrap();
        let test = gaussian_samples(5000, n, &mut rng);
        let err: f64 = test
            .iter()
            .map(|x| sq_dist(x, &codec.decode(&codec.encode(x).unwrap()).unwrap()) / n as f64)
            .sum::<f64>()
            / test.len() as f64;
        assert!((err - 0.75).abs() / 0.75 < 0.05, "{err}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let same = vec![vec![1.0, 2.0, 3.0]; 10];
        assert!(matches!(LinearCodec::fit(&same, 1), Err(Error::Fit(_))));
        let data = vec![vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, 1.0]];
        assert!(LinearCodec::fit(&data, 2).is_err());
        assert!(LinearCodec::fit(&[], 1).is_err());
    }

    #[test]
    fn mean_maps_to_origin_and_back() {
        let mut rng = rng_from_seed(53);
        let data = gaussian_samples(500, 8, &mut rng);
        let codec = LinearCodec::fit(&data, 3).unwrap();
        let mean: Vec<f64> = codec.data_mean().iter().copied().collect();
        let z = codec.encode(&mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let back = codec.decode(&LatentVector::zeros(3)).unwrap();
        assert!(sq_dist(&back, &mean) < 1e-24);
        assert!(codec.encode(&[0.0; 7]).is_err());
        assert!(codec.decode(&LatentVector::zeros(4)).is_err());
    }

    #[test]
    fn decode_preserves_scaled_distances() {
        let mut rng = rng_from_seed(54);
        let data = gaussian_samples(500, 9, &mut rng);
        let codec = LinearCodec::fit(&data, 4).unwrap();
        for _ in 0..50 {
            let z1 = crate::rng::standard_normal_vector(4, &mut rng);
            let z2 = crate::rng::standard_normal_vector(4, &mut rng);
            let lhs = sq_dist(&codec.decode(&z1).unwrap(), &codec.decode(&z2).unwrap()).sqrt();
            let rhs: f64 = (0..4)
                .map(|j| ((z1[j] - z2[j]) / codec.latent_scale()[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn encode_is_affine() {
        let mut rng = rng_from_seed(55);
        let data = gaussian_samples(500, 6, &mut rng);
        let codec = LinearCodec::fit(&data, 2).unwrap();
        let mean: Vec<f64> = codec.data_mean().iter().copied().collect();
        let (a, b) = (0.7, -1.3);
        let x = &data[0];
        let y = &data[1];
        // f(mean + a (x - mean) + b (y - mean)) = a f(x) + b f(y)
        let combo: Vec<f64> = (0..6)
            .map(|i| mean[i] + a * (x[i] - mean[i]) + b * (y[i] - mean[i]))
            .collect();
        let lhs = codec.encode(&combo).unwrap();
        let fx = codec.encode(x).unwrap();
        let fy = codec.encode(y).unwrap();
        for j in 0..2 {
            assert!((lhs[j] - (a * fx[j] + b * fy[j])).abs() < 1e-10);
        }
    }

    #[test]
    fn round_trip_error_is_out_of_subspace_energy() {
        let mut rng = rng_from_seed(56);
        let data = gaussian_samples(300, 7, &mut rng);
        let codec = LinearCodec::fit(&data, 3).unwrap();
        let mean = codec.data_mean().clone();
        let x = &data[5];
        let c = DVector::from_column_slice(x) - &mean;
        let inside = codec.basis().tr_mul(&(codec.basis() * &c));
        let outside = (&c - inside).norm_squared();
        let back = codec.decode(&codec.encode(x).unwrap()).unwrap();
        assert!((sq_dist(x, &back) - outside).abs() < 1e-10);
    }

    #[test]
    fn from_parts_rejects_a_skewed_basis() {
        let mut basis = DMatrix::zeros(2, 4);
        basis[(0, 0)] = 1.0;
        basis[(1, 1)] = 1.0;
        let ok = LinearCodec::from_parts(basis.clone(), DVector::zeros(4), DVector::from_element(2, 1.0), 1.0);
        assert!(ok.is_ok());
        basis[(1, 0)] = 0.01;
        let err = LinearCodec::from_parts(basis, DVector::zeros(4), DVector::from_element(2, 1.0), 1.0);
        assert!(err.unwrap_err().to_string().contains("orthonormal"));
    }
}
