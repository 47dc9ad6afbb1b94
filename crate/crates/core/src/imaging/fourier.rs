use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::error::{check_len, Error, Result};
use crate::rng;

/// A Cartesian k-space sampling pattern that keeps whole phase-encode
/// columns.
///
/// Columns are chosen in conjugate pairs `(c, −c)`, so for real images the
/// normal operator `HᵀH` is an orthogonal projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartesianMask {
    pub width: usize,
    pub height: usize,
    /// Retained column indices (unshifted DFT ordering), ascending.
    pub columns: Vec<usize>,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
}

impl CartesianMask {
    /// `M`, the number of retained complex samples.
    pub fn sample_count(&self) -> usize {
        self.columns.len() * self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// `N / M` as realized after rounding.
    pub fn realized_acceleration(&self) -> f64 {
        self.pixel_count() as f64 / self.sample_count() as f64
    }

    /// Row-major indices of retained k-space locations, in data order.
    pub fn sample_indices(&self) -> Vec<usize> {
        (0..self.height)
            .flat_map(|r| self.columns.iter().map(move |&c| r * self.width + c))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.columns.is_empty() {
            return Err(Error::invalid("mask must be non-empty"));
        }
        if self.columns.windows(2).any(|w| w[0] >= w[1])
            || *self.columns.last().unwrap() >= self.width
        {
            return Err(Error::invalid(
                "mask columns must be ascending and in range",
            ));
        }
        Ok(())
    }
}

fn mirror(c: usize, width: usize) -> usize {
    (width - c) % width
}

/// Builds a seeded random Cartesian mask: a fully sampled band of low
/// frequencies plus random conjugate column pairs until `round(width / R)`
/// columns are kept.
pub fn make_cartesian_mask(
    width: usize,
    height: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<CartesianMask> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!(
            "acceleration must be ≥ 1, got {acceleration}"
        )));
    }
    if !(center_fraction >= 0.0) {
        return Err(Error::invalid("center_fraction must be non-negative"));
    }
    let target = ((width as f64 / acceleration).round() as usize).clamp(1, width);
    let n_center = (center_fraction * width as f64).round() as usize;
    if n_center > target {
        return Err(Error::Infeasible(format!(
            "center band of {n_center} columns exceeds the {target} columns allowed at R = {acceleration}"
        )));
    }

    let mut keep = vec![false; width];
    let mut count = 0;
    let add = |c: usize, keep: &mut Vec<bool>, count: &mut usize| {
        if !keep[c] {
            keep[c] = true;
            *count += 1;
        }
    };
    add(0, &mut keep, &mut count);
    let mut f = 1;
    while count < n_center && f <= width / 2 {
        add(f, &mut keep, &mut count);
        add(mirror(f, width), &mut keep, &mut count);
        f += 1;
    }
    if count > target {
        return Err(Error::Infeasible(format!(
            "symmetric center band needs {count} columns, only {target} allowed"
        )));
    }

    // The Nyquist column is its own mirror; use it to fix parity.
    let nyquist = (width % 2 == 0 && width > 1).then_some(width / 2);
    if (target - count) % 2 == 1 {
        if let Some(ny) = nyquist.filter(|&ny| !keep[ny]) {
            add(ny, &mut keep, &mut count);
        }
    }
    let mut pairs: Vec<usize> = (1..width.div_ceil(2)).filter(|&c| !keep[c]).collect();
    let mut r = rng::stream(seed);
    pairs.shuffle(&mut r);
    for c in pairs {
        if count + 2 > target {
            break;
        }
        add(c, &mut keep, &mut count);
        add(mirror(c, width), &mut keep, &mut count);
    }
    if count < target {
        if let Some(ny) = nyquist.filter(|&ny| !keep[ny]) {
            add(ny, &mut keep, &mut count);
        }
    }

    let mask = CartesianMask {
        width,
        height,
        columns: (0..width).filter(|&c| keep[c]).collect(),
        acceleration,
        center_fraction,
        seed,
    };
    mask.validate()?;
    Ok(mask)
}

/// `H = M̄·F`: orthonormal 2-D DFT followed by sampling on the mask.
#[derive(Clone)]
pub struct FourierOperator {
    mask: CartesianMask,
    indices: Vec<usize>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FourierOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierOperator")
            .field("mask", &self.mask)
            .finish()
    }
}

impl FourierOperator {
    pub fn new(mask: CartesianMask) -> Result<Self> {
        mask.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            indices: mask.sample_indices(),
            row_fwd: planner.plan_fft_forward(mask.width),
            row_inv: planner.plan_fft_inverse(mask.width),
            col_fwd: planner.plan_fft_forward(mask.height),
            col_inv: planner.plan_fft_inverse(mask.height),
            mask,
        })
    }

    pub fn mask(&self) -> &CartesianMask {
        &self.mask
    }

    pub fn sample_count(&self) -> usize {
        self.indices.len()
    }

    fn dft2(&self, data: &mut [Complex64], inverse: bool) {
        let (w, h) = (self.mask.width, self.mask.height);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut t = vec![Complex64::default(); w * h];
        for r in 0..h {
            for c in 0..w {
                t[c * h + r] = data[r * w + c];
            }
        }
        col.process(&mut t);
        let scale = 1.0 / ((w * h) as f64).sqrt();
        for r in 0..h {
            for c in 0..w {
                data[r * w + c] = t[c * h + r] * scale;
            }
        }
    }

    /// Retained entries of the orthonormal DFT of `f`.
    pub fn forward(&self, f: &[f64]) -> Result<Vec<Complex64>> {
        check_len("fourier_forward image", self.mask.pixel_count(), f.len())?;
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.dft2(&mut buf, false);
        Ok(self.indices.iter().map(|&i| buf[i]).collect())
    }

    /// Real part of the inverse DFT of zero-filled samples; the exact
    /// adjoint under the real inner product `Re⟨·,·⟩`.
    pub fn adjoint(&self, g: &[Complex64]) -> Result<Vec<f64>> {
        check_len("fourier_adjoint data", self.indices.len(), g.len())?;
        let mut buf = vec![Complex64::default(); self.mask.pixel_count()];
        for (&i, &v) in self.indices.iter().zip(g) {
            buf[i] = v;
        }
        self.dft2(&mut buf, true);
        Ok(buf.into_iter().map(|z| z.re).collect())
    }
}

impl LinearOperator for FourierOperator {
    fn domain_len(&self) -> usize {
        self.mask.pixel_count()
    }

    /// Interleaved `(re, im)` pairs.
    fn range_len(&self) -> usize {
        2 * self.indices.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x)
            .expect("operator dimensions")
            .into_iter()
            .flat_map(|z| [z.re, z.im])
            .collect()
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let g: Vec<Complex64> = y
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        self.adjoint(&g).expect("operator dimensions")
    }
}

/// Noisy k-space samples and the per-sample noise level `σ`
/// (`E|n_i|² = σ²`).
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub samples: Vec<Complex64>,
    pub sigma: f64,
}

/// Adds circular complex Gaussian noise with total variance `σ²` per sample
/// (`σ²/2` in each of the real and imaginary parts).
pub fn add_complex_gaussian(clean: &[Complex64], sigma: f64, seed: u64) -> Result<KSpaceData> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be finite and ≥ 0, got {sigma}"
        )));
    }
    let mut r = rng::stream(seed);
    let s = sigma / std::f64::consts::SQRT_2;
    let samples = clean
        .iter()
        .map(|&z| {
            if sigma == 0.0 {
                return z;
            }
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            z + Complex64::new(s * re, s * im)
        })
        .collect();
    Ok(KSpaceData { samples, sigma })
}

/// `J = ‖g − H f‖² / (2σ²)` and its gradient `Hᵀ(H f − g)/σ²`.
pub fn gaussian_fidelity(
    data: &KSpaceData,
    image: &[f64],
    op: &FourierOperator,
) -> Result<(f64, Vec<f64>)> {
    if !(data.sigma > 0.0) {
        return Err(Error::invalid("Gaussian fidelity needs σ > 0"));
    }
    check_len("k-space data", op.sample_count(), data.samples.len())?;
    let hf = op.forward(image)?;
    let resid: Vec<Complex64> = hf.iter().zip(&data.samples).map(|(a, b)| a - b).collect();
    let inv_var = 1.0 / (data.sigma * data.sigma);
    let value = 0.5 * inv_var * resid.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut grad = op.adjoint(&resid)?;
    grad.iter_mut().for_each(|g| *g *= inv_var);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed);
        rng::standard_normals(&mut r, n)
    }

    #[test]
    fn mask_sizes() {
        let m = make_cartesian_mask(32, 32, 1.0, 0.04, 0).unwrap();
        assert_eq!(m.sample_count(), 1024);
        let m = make_cartesian_mask(64, 64, 8.0, 0.04, 3).unwrap();
        assert_eq!(m.columns.len(), 8);
        assert_eq!(m.sample_count(), 8 * 64);
        for r in [6.0, 8.0] {
            let m = make_cartesian_mask(256, 256, r, 0.04, 1).unwrap();
            assert_eq!(m.columns.len(), (256.0 / r).round() as usize);
        }
        assert!(make_cartesian_mask(64, 64, 8.0, 0.2, 0).is_err());
    }

    #[test]
    fn mask_is_seeded_and_conjugate_symmetric() {
        let a = make_cartesian_mask(32, 32, 2.0, 0.04, 5).unwrap();
        assert_eq!(a, make_cartesian_mask(32, 32, 2.0, 0.04, 5).unwrap());
        assert_ne!(
            a.columns,
            make_cartesian_mask(32, 32, 2.0, 0.04, 6).unwrap().columns
        );
        for &c in &a.columns {
            assert!(a.columns.contains(&mirror(c, 32)));
        }
        assert!(a.columns.contains(&0));
    }

    #[test]
    fn zero_image_has_zero_data_and_full_sampling_is_unitary() {
        let op = FourierOperator::new(make_cartesian_mask(16, 8, 1.0, 0.0, 0).unwrap()).unwrap();
        assert!(op
            .forward(&[0.0; 128])
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));
        let f = random_image(1, 128);
        let back = op.adjoint(&op.forward(&f).unwrap()).unwrap();
        let err = f
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn dot_product_adjoint_test() {
        let op = FourierOperator::new(make_cartesian_mask(32, 32, 4.0, 0.04, 2).unwrap()).unwrap();
        let f = random_image(2, 1024);
        let g = random_image(3, op.range_len());
        let hf = op.apply(&f);
        let lhs: f64 = hf.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.iter().zip(op.apply_adjoint(&g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-10);
    }

    #[test]
    fn normal_operator_is_idempotent() {
        let op = FourierOperator::new(make_cartesian_mask(32, 32, 2.0, 0.04, 2).unwrap()).unwrap();
        let f = random_image(4, 1024);
        let once = op.apply_adjoint(&op.apply(&f));
        let twice = op.apply_adjoint(&op.apply(&once));
        let err = once
            .iter()
            .zip(&twice)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn complex_noise_statistics() {
        let clean = vec![Complex64::new(1.0, -2.0); 100_000];
        let same = add_complex_gaussian(&clean, 0.0, 1).unwrap();
        assert_eq!(same.samples, clean);

        let sigma = 0.07;
        let a = add_complex_gaussian(&clean, sigma, 9).unwrap();
        assert_eq!(a, add_complex_gaussian(&clean, sigma, 9).unwrap());
        let n = clean.len() as f64;
        let mean_sq = a
            .samples
            .iter()
            .zip(&clean)
            .map(|(x, c)| (x - c).norm_sqr())
            .sum::<f64>()
            / n;
        let s2 = sigma * sigma;
        assert!(
            (mean_sq - s2).abs() < 3.0 * s2 / n.sqrt(),
            "{mean_sq} vs {s2}"
        );
    }

    #[test]
    fn fidelity_values_and_gradient() {
        let op = FourierOperator::new(make_cartesian_mask(16, 16, 2.0, 0.0, 1).unwrap()).unwrap();
        let f = random_image(5, 256);
        let clean = KSpaceData {
            samples: op.forward(&f).unwrap(),
            sigma: 0.05,
        };
        let (j, g) = gaussian_fidelity(&clean, &f, &op).unwrap();
        assert!(j.abs() < 1e-20 && g.iter().all(|x| x.abs() < 1e-12));

        let shifted: Vec<f64> = f.iter().map(|x| x + 0.01).collect();
        let twice: Vec<f64> = f.iter().map(|x| x + 0.02).collect();
        let j1 = gaussian_fidelity(&clean, &shifted, &op).unwrap().0;
        let j2 = gaussian_fidelity(&clean, &twice, &op).unwrap().0;
        assert!((j2 / j1 - 4.0).abs() < 1e-9);

        let data = add_complex_gaussian(&clean.samples, 0.05, 3).unwrap();
        let (_, g) = gaussian_fidelity(&data, &f, &op).unwrap();
        let h = 1e-6;
        for idx in (0..256).step_by(13) {
            let mut p = f.clone();
            let mut m = f.clone();
            p[idx] += h;
            m[idx] -= h;
            let fd = (gaussian_fidelity(&data, &p, &op).unwrap().0
                - gaussian_fidelity(&data, &m, &op).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-6 * g[idx].abs().max(1.0));
        }
        let zero = KSpaceData { sigma: 0.0, ..data };
        assert!(gaussian_fidelity(&zero, &f, &op).is_err());
    }
}
