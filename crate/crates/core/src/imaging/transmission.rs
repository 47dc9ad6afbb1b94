//! Monoenergetic X-ray transmission: Beer–Lambert intensities, Poisson
//! counting noise and the generalized Kullback–Leibler fidelity.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::SparseMatrix;
use crate::error::{check_len, Error, Result};
use crate::rng::{self, StreamRng};

/// Default attenuation scale (mm⁻¹) mapping object values in `(0, 1)` to
/// linear attenuation.
pub const DEFAULT_MU_MAX: f64 = 0.063;

/// Measured photon counts together with the acquisition constants needed to
/// model them.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityData {
    pub counts: Vec<f64>,
    pub i0: f64,
    pub mu_max: f64,
}

impl IntensityData {
    pub fn new(counts: Vec<f64>, i0: f64, mu_max: f64) -> Result<Self> {
        if !(i0 > 0.0 && i0.is_finite()) {
            return Err(Error::invalid(format!("I0 must be positive, got {i0}")));
        }
        if !(mu_max >= 0.0 && mu_max.is_finite()) {
            return Err(Error::invalid(format!("mu_max must be ≥ 0, got {mu_max}")));
        }
        if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("counts must be finite and ≥ 0"));
        }
        Ok(Self { counts, i0, mu_max })
    }
}

/// Line integrals `H(μ_max·f)` in attenuation units.
fn attenuation(h: &SparseMatrix, image: &[f64], mu_max: f64) -> Result<Vec<f64>> {
    let mut p = h.mul_vec(image)?;
    p.iter_mut().for_each(|v| *v *= mu_max);
    Ok(p)
}

/// Expected counts `ḡ = I₀·exp(−H(μ_max·f))`.
pub fn xray_intensity(h: &SparseMatrix, image: &[f64], i0: f64, mu_max: f64) -> Result<Vec<f64>> {
    if !(i0 > 0.0) || !(mu_max >= 0.0) {
        return Err(Error::invalid("need I0 > 0 and mu_max ≥ 0"));
    }
    Ok(attenuation(h, image, mu_max)?
        .into_iter()
        .map(|p| i0 * (-p).exp())
        .collect())
}

/// One Poisson variate: sequential-search inversion for small means,
/// Hörmann's transformed rejection (PTRS) otherwise.
pub fn poisson_draw(rng: &mut StreamRng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 30.0 {
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
            if p <= 0.0 {
                break;
            }
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Independent Poisson counts with the given means, drawn from one seeded
/// stream in index order.
pub fn add_poisson(mean: &[f64], i0: f64, mu_max: f64, seed: u64) -> Result<IntensityData> {
    if mean.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
        return Err(Error::invalid("Poisson means must be finite and ≥ 0"));
    }
    let mut r = rng::stream(seed);
    let counts = mean
        .iter()
        .map(|&m| poisson_draw(&mut r, m) as f64)
        .collect();
    IntensityData::new(counts, i0, mu_max)
}

/// Generalized KL divergence `Σ g ln(g/ĝ) − g + ĝ` between the counts and
/// the model `ĝ = I₀·exp(−H(μ_max·f))`, with gradient `Hᵀ(μ_max·(g − ĝ))`.
pub fn kl_fidelity(
    data: &IntensityData,
    image: &[f64],
    h: &SparseMatrix,
) -> Result<(f64, Vec<f64>)> {
    check_len("intensity data", h.rows(), data.counts.len())?;
    let p = attenuation(h, image, data.mu_max)?;
    let ln_i0 = data.i0.ln();
    let mut value = 0.0;
    let mut weights = Vec::with_capacity(p.len());
    for (&g, &pi) in data.counts.iter().zip(&p) {
        let ln_model = ln_i0 - pi;
        let model = ln_model.exp();
        let term = if g > 0.0 {
            g * (g.ln() - ln_model) - g + model
        } else {
            model
        };
        value += term;
        weights.push(data.mu_max * (g - model));
    }
    let grad = h.mul_transpose_vec(&weights)?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::fanbeam::{build_fanbeam, FanBeamGeometry};

    fn system() -> SparseMatrix {
        build_fanbeam(&FanBeamGeometry::scaled(12, 0.82, 15)).unwrap()
    }

    fn random_object(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed);
        (0..n).map(|_| r.random_range(0.05..0.95)).collect()
    }

    #[test]
    fn poisson_moments_match_at_100() {
        let n = 100_000;
        let data = add_poisson(&vec![100.0; n], 1.0, 0.0, 17).unwrap();
        let mean = data.counts.iter().sum::<f64>() / n as f64;
        let var = data.counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 100.0).abs() < 1.0, "mean {mean}");
        assert!((var - 100.0).abs() < 5.0, "variance {var}");
    }

    #[test]
    fn poisson_moments_small_mean() {
        let n = 100_000;
        let data = add_poisson(&vec![3.5; n], 1.0, 0.0, 5).unwrap();
        let mean = data.counts.iter().sum::<f64>() / n as f64;
        let var = data.counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 3.5).abs() < 0.03, "mean {mean}");
        assert!((var - 3.5).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn zero_mean_and_reproducibility() {
        let m = [0.0, 10.0, 1e4, 0.0];
        let a = add_poisson(&m, 1.0, 0.0, 9).unwrap();
        assert_eq!(a.counts[0], 0.0);
        assert_eq!(a.counts[3], 0.0);
        assert_eq!(a, add_poisson(&m, 1.0, 0.0, 9).unwrap());
        assert!(add_poisson(&[-1.0], 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn intensity_properties() {
        let h = system();
        let zero = xray_intensity(&h, &vec![0.0; h.cols()], 1e3, DEFAULT_MU_MAX).unwrap();
        assert!(zero.iter().all(|&g| g == 1e3));
        let f = random_object(1, h.cols());
        let base = xray_intensity(&h, &f, 1e3, DEFAULT_MU_MAX).unwrap();
        assert!(base.iter().all(|&g| g > 0.0 && g <= 1e3));
        let mut raised = f.clone();
        raised[70] += 0.5;
        let after = xray_intensity(&h, &raised, 1e3, DEFAULT_MU_MAX).unwrap();
        assert!(after.iter().zip(&base).all(|(a, b)| a <= b));
    }

    #[test]
    fn kl_zero_at_model_and_nonnegative() {
        let h = system();
        let f = random_object(2, h.cols());
        let model = xray_intensity(&h, &f, 1e5, DEFAULT_MU_MAX).unwrap();
        let exact = IntensityData::new(model, 1e5, DEFAULT_MU_MAX).unwrap();
        let (j, grad) = kl_fidelity(&exact, &f, &h).unwrap();
        assert!(j.abs() < 1e-6 * h.rows() as f64);
        assert!(grad.iter().all(|g| g.abs() < 1e-6));
        for seed in 0..100 {
            let g = random_object(100 + seed, h.cols());
            let (j, _) = kl_fidelity(&exact, &g, &h).unwrap();
            assert!(j >= 0.0);
        }
    }

    #[test]
    fn kl_gradient_matches_central_differences() {
        let h = system();
        let truth = random_object(3, h.cols());
        let mean = xray_intensity(&h, &truth, 1e3, DEFAULT_MU_MAX).unwrap();
        let data = add_poisson(&mean, 1e3, DEFAULT_MU_MAX, 4).unwrap();
        let f = random_object(5, h.cols());
        let (_, grad) = kl_fidelity(&data, &f, &h).unwrap();
        let eps = 1e-5;
        for i in (0..h.cols()).step_by(h.cols() / 20).take(20) {
            let mut fp = f.clone();
            fp[i] += eps;
            let mut fm = f.clone();
            fm[i] -= eps;
            let fd = (kl_fidelity(&data, &fp, &h).unwrap().0
                - kl_fidelity(&data, &fm, &h).unwrap().0)
                / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(1e-8);
            assert!(rel < 1e-4, "pixel {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_count_rays_are_handled() {
        let h = system();
        let f = random_object(6, h.cols());
        let data = IntensityData::new(vec![0.0; h.rows()], 1e3, DEFAULT_MU_MAX).unwrap();
        let (j, grad) = kl_fidelity(&data, &f, &h).unwrap();
        let model: f64 = xray_intensity(&h, &f, 1e3, DEFAULT_MU_MAX)
            .unwrap()
            .iter()
            .sum();
        assert!((j - model).abs() < 1e-9 * model);
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
