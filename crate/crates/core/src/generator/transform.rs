use nalgebra::{DMatrix, SymmetricEigen};

use super::{mapping_forward, GeneratorWeights};
use crate::error::{Error, Result};
use crate::latent::{noise_dims, LatentNoiseSet, LatentStyleMatrix};
use crate::rng::{self, StreamRng};

/// `T(w) = Wh·(LeakyReLU(w) − μ)` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub mean: Vec<f64>,
    /// Symmetric inverse square root of the regularized covariance, `k × k`
    /// row-major.
    pub whitening: Vec<f64>,
    /// Inverse of `whitening` (the symmetric square root of the covariance).
    pub coloring: Vec<f64>,
    pub leaky_slope: f64,
}

fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
    m.chunks_exact(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl TransformParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `v = T(w)` for a single column.
    pub fn forward(&self, w: &[f64]) -> Vec<f64> {
        let s = self.leaky_slope;
        let centered: Vec<f64> = w
            .iter()
            .zip(&self.mean)
            .map(|(&x, m)| if x >= 0.0 { x } else { s * x } - m)
            .collect();
        matvec(&self.whitening, &centered)
    }

    /// `w = T⁻¹(v)` for a single column.
    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        let s = self.leaky_slope;
        matvec(&self.coloring, v)
            .into_iter()
            .zip(&self.mean)
            .map(|(u, m)| {
                let u = u + m;
                if u >= 0.0 {
                    u
                } else {
                    u / s
                }
            })
            .collect()
    }

    /// Inverse together with the pre-activation `u = Wh⁻¹ v + μ`, which the
    /// backward pass needs for the leaky-ReLU branch.
    pub(crate) fn inverse_with_preactivation(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.leaky_slope;
        let u: Vec<f64> = matvec(&self.coloring, v)
            .into_iter()
            .zip(&self.mean)
            .map(|(u, m)| u + m)
            .collect();
        let w = u
            .iter()
            .map(|&u| if u >= 0.0 { u } else { u / s })
            .collect();
        (w, u)
    }

    /// `Jᵀ·dw` for `T⁻¹` at the pre-activation `u`.
    pub(crate) fn inverse_vjp(&self, u: &[f64], dw: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let du: Vec<f64> = u
            .iter()
            .zip(dw)
            .map(|(&u, &g)| if u >= 0.0 { g } else { g / self.leaky_slope })
            .collect();
        let mut dv = vec![0.0; k];
        for (row, g) in self.coloring.chunks_exact(k).zip(&du) {
            dv.iter_mut().zip(row).for_each(|(d, c)| *d += c * g);
        }
        dv
    }
}

/// Estimates the whitening transform from `n_samples` mapped latents.
///
/// The sample covariance is regularized by `1e-6·trace/k` on the diagonal and
/// whitened with its symmetric inverse square root.
pub fn fit_transform(
    weights: &GeneratorWeights,
    n_samples: usize,
    seed: u64,
) -> Result<TransformParams> {
    let k = weights.config.latent_dim;
    if n_samples < 10 * k {
        return Err(Error::invalid(format!(
            "fit_transform needs at least 10·k = {} samples, got {n_samples}",
            10 * k
        )));
    }
    let slope = weights.config.leaky_slope;
    let mut r = rng::stream(seed);
    let mut data = DMatrix::<f64>::zeros(k, n_samples);
    for j in 0..n_samples {
        let z = rng::standard_normals(&mut r, k);
        let w = mapping_forward(weights, &z);
        for (i, x) in w.into_iter().enumerate() {
            data[(i, j)] = if x >= 0.0 { x } else { slope * x };
        }
    }
    let mean: Vec<f64> = (0..k).map(|i| data.row(i).mean()).collect();
    for j in 0..n_samples {
        for i in 0..k {
            data[(i, j)] -= mean[i];
        }
    }
    let mut cov = (&data * data.transpose()) / n_samples as f64;
    let ridge = 1e-6 * cov.trace() / k as f64;
    if !(ridge > 0.0) || !ridge.is_finite() {
        return Err(Error::Infeasible(
            "mapped latents have zero or non-finite covariance".into(),
        ));
    }
    for i in 0..k {
        cov[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Infeasible(
            "covariance is not positive definite".into(),
        ));
    }
    let q = &eig.eigenvectors;
    let build = |f: fn(f64) -> f64| -> Vec<f64> {
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
        let m = q * d * q.transpose();
        // Row-major export, symmetrized against rounding.
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        out
    };
    Ok(TransformParams {
        mean,
        whitening: build(|l| 1.0 / l.sqrt()),
        coloring: build(f64::sqrt),
        leaky_slope: slope,
    })
}

/// Columnwise `T`.
pub fn transform_forward(t: &TransformParams, w: &LatentStyleMatrix) -> LatentStyleMatrix {
    let cols: Vec<Vec<f64>> = w.columns().map(|c| t.forward(c)).collect();
    LatentStyleMatrix::from_columns(&cols).expect("transform preserves shape")
}

/// Columnwise `T⁻¹`.
pub fn transform_inverse(t: &TransformParams, v: &LatentStyleMatrix) -> LatentStyleMatrix {
    let cols: Vec<Vec<f64>> = v.columns().map(|c| t.inverse(c)).collect();
    LatentStyleMatrix::from_columns(&cols).expect("transform preserves shape")
}

/// One style vector `v = T(G_m(z))` with `z ~ N(0, I_k)`.
pub fn sample_style_vector(
    weights: &GeneratorWeights,
    t: &TransformParams,
    r: &mut StreamRng,
) -> Vec<f64> {
    let z = rng::standard_normals(r, weights.config.latent_dim);
    t.forward(&mapping_forward(weights, &z))
}

/// A latent state whose image lies in the generator range: one
/// `v = T(G_m(z))` repeated over all layers, and `Φ ~ N(0, I)`.
pub fn sample_latents(
    weights: &GeneratorWeights,
    t: &TransformParams,
    seed: u64,
) -> (LatentStyleMatrix, LatentNoiseSet) {
    let mut r = rng::stream(seed);
    let v = sample_style_vector(weights, t, &mut r);
    let layers = weights.config.layers;
    let styles = LatentStyleMatrix::from_columns(&vec![v; layers]).expect("non-empty columns");
    let noise = LatentNoiseSet::new(
        noise_dims(layers)
            .into_iter()
            .map(|p| rng::standard_normals(&mut r, p))
            .collect(),
    )
    .expect("sizes agree by construction");
    (styles, noise)
}

/// `n` draws of `‖T(G_m(z))‖²`.
pub fn sample_latent_norm_sq(
    weights: &GeneratorWeights,
    t: &TransformParams,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let mut r = rng::stream(seed);
    (0..n)
        .map(|_| {
            let v = sample_style_vector(weights, t, &mut r);
            v.iter().map(|x| x * x).sum()
        })
        .collect()
}
