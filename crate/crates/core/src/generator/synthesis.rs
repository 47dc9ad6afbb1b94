use super::{GeneratorWeights, ObjectImage, TransformParams};
use crate::error::{check_len, Error, Result};
use crate::latent::{LatentNoiseSet, LatentStyleMatrix};

/// Pixels are squashed into `[m, 1 − m]`, strictly inside `(0, 1)` even when
/// the logistic saturates in floating point.
const SQUASH_MARGIN: f64 = 1e-6;
const NORM_EPS: f64 = 1e-5;

/// 3×3 zero-padded convolution, `out = bias + K * input`.
fn conv3x3(
    input: &[f64],
    channels: usize,
    res: usize,
    kernel: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let plane = res * res;
    for co in 0..channels {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(bias[co]);
        for ci in 0..channels {
            let src = &input[ci * plane..(ci + 1) * plane];
            let taps = &kernel[(co * channels + ci) * 9..(co * channels + ci + 1) * 9];
            for (t, &w) in taps.iter().enumerate() {
                let (dy, dx) = (t as isize / 3 - 1, t as isize % 3 - 1);
                let x0 = (-dx).max(0) as usize;
                let x1 = (res as isize - dx.max(0)) as usize;
                for y in 0..res {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= res as isize {
                        continue;
                    }
                    let srow = &src[sy as usize * res..(sy as usize + 1) * res];
                    let drow = &mut dst[y * res..(y + 1) * res];
                    let sx0 = (x0 as isize + dx) as usize;
                    for (d, s) in drow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                        *d += w * s;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv3x3`] with respect to its input.
fn conv3x3_transpose(d_out: &[f64], channels: usize, res: usize, kernel: &[f64], d_in: &mut [f64]) {
    let plane = res * res;
    d_in.fill(0.0);
    for co in 0..channels {
        let src = &d_out[co * plane..(co + 1) * plane];
        for ci in 0..channels {
            let dst = &mut d_in[ci * plane..(ci + 1) * plane];
            let taps = &kernel[(co * channels + ci) * 9..(co * channels + ci + 1) * 9];
            for (t, &w) in taps.iter().enumerate() {
                let (dy, dx) = (t as isize / 3 - 1, t as isize % 3 - 1);
                let x0 = (-dx).max(0) as usize;
                let x1 = (res as isize - dx.max(0)) as usize;
                for y in 0..res {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= res as isize {
                        continue;
                    }
                    let grow = &src[y * res..(y + 1) * res];
                    let drow = &mut dst[sy as usize * res..(sy as usize + 1) * res];
                    let sx0 = (x0 as isize + dx) as usize;
                    for (d, g) in drow[sx0..sx0 + (x1 - x0)].iter_mut().zip(&grow[x0..x1]) {
                        *d += w * g;
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling of `channels` planes of side `res`.
fn upsample2(input: &[f64], channels: usize, res: usize) -> Vec<f64> {
    let big = 2 * res;
    let mut out = vec![0.0; channels * big * big];
    for c in 0..channels {
        for y in 0..big {
            for x in 0..big {
                out[c * big * big + y * big + x] = input[c * res * res + (y / 2) * res + x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
fn upsample2_adjoint(d: &[f64], channels: usize, res: usize) -> Vec<f64> {
    let big = 2 * res;
    let mut out = vec![0.0; channels * res * res];
    for c in 0..channels {
        for y in 0..big {
            for x in 0..big {
                out[c * res * res + (y / 2) * res + x / 2] += d[c * big * big + y * big + x];
            }
        }
    }
    out
}

/// Activations of one synthesis evaluation, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    resolutions: Vec<usize>,
    /// Pre-activations of `T⁻¹` per layer.
    style_pre: Vec<Vec<f64>>,
    /// Per-layer `[scale; shift]` modulation vectors.
    modulation: Vec<Vec<f64>>,
    conv_out: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    logistic: Vec<f64>,
    image: Vec<f64>,
}

impl ForwardPass {
    pub fn run(
        weights: &GeneratorWeights,
        transform: &TransformParams,
        styles: &LatentStyleMatrix,
        noise: &LatentNoiseSet,
    ) -> Result<Self> {
        let cfg = &weights.config;
        check_len("style dimension", cfg.latent_dim, styles.dim())?;
        check_len("style layers", cfg.layers, styles.layers())?;
        check_len("noise layers", cfg.layers, noise.layers())?;
        check_len("transform dimension", cfg.latent_dim, transform.dim())?;

        let c = cfg.channels;
        let slope = cfg.leaky_slope;
        let resolutions: Vec<usize> = (0..cfg.layers).map(|i| cfg.layer_resolution(i)).collect();
        let mut pass = ForwardPass {
            resolutions: resolutions.clone(),
            style_pre: Vec::with_capacity(cfg.layers),
            modulation: Vec::with_capacity(cfg.layers),
            conv_out: Vec::with_capacity(cfg.layers),
            normalized: Vec::with_capacity(cfg.layers),
            inv_std: Vec::with_capacity(cfg.layers),
            features: Vec::with_capacity(cfg.layers),
            logistic: Vec::new(),
            image: Vec::new(),
        };

        for (i, layer) in weights.layers.iter().enumerate() {
            let res = resolutions[i];
            let plane = res * res;

            let (w, u) = transform.inverse_with_preactivation(styles.column(i));
            let modulation: Vec<f64> = layer
                .style_weight
                .chunks_exact(cfg.latent_dim)
                .zip(&layer.style_bias)
                .map(|(row, b)| b + row.iter().zip(&w).map(|(a, x)| a * x).sum::<f64>())
                .collect();

            let upsampled;
            let input: &[f64] = if i == 0 {
                &weights.constant
            } else if res > resolutions[i - 1] {
                upsampled = upsample2(&pass.features[i - 1], c, resolutions[i - 1]);
                &upsampled
            } else {
                &pass.features[i - 1]
            };

            let mut y = vec![0.0; c * plane];
            conv3x3(input, c, res, &layer.kernel, &layer.bias, &mut y);
            let phi = noise.get(i);
            for ch in y.chunks_exact_mut(plane) {
                ch.iter_mut()
                    .zip(phi)
                    .for_each(|(v, p)| *v += layer.noise_scale * p);
            }

            let mut normalized = vec![0.0; c * plane];
            let mut out = vec![0.0; c * plane];
            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                let a: Vec<f64> = y[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| if v >= 0.0 { v } else { slope * v })
                    .collect();
                let mean = a.iter().sum::<f64>() / plane as f64;
                let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[ch] = is;
                let (scale, shift) = (1.0 + modulation[ch], modulation[c + ch]);
                for (p, &av) in a.iter().enumerate() {
                    let n = (av - mean) * is;
                    normalized[ch * plane + p] = n;
                    out[ch * plane + p] = scale * n + shift;
                }
            }

            pass.style_pre.push(u);
            pass.modulation.push(modulation);
            pass.conv_out.push(y);
            pass.normalized.push(normalized);
            pass.inv_std.push(inv_std);
            pass.features.push(out);
        }

        let last = pass.features.last().expect("at least two layers");
        let plane = cfg.pixel_count();
        let mut logistic = vec![0.0; plane];
        let mut image = vec![0.0; plane];
        for p in 0..plane {
            let pre = weights.head_bias
                + (0..c)
                    .map(|ch| weights.head_weight[ch] * last[ch * plane + p])
                    .sum::<f64>();
            let s = 1.0 / (1.0 + (-pre).exp());
            logistic[p] = s;
            image[p] = SQUASH_MARGIN + (1.0 - 2.0 * SQUASH_MARGIN) * s;
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("synthesized image".into()));
        }
        pass.logistic = logistic;
        pass.image = image;
        Ok(pass)
    }

    pub fn image(&self) -> &[f64] {
        &self.image
    }

    pub fn to_image(&self) -> ObjectImage {
        let side = *self.resolutions.last().expect("at least two layers");
        ObjectImage::new(side, side, self.image.clone()).expect("squashed output lies in (0, 1)")
    }

    /// Output features (after modulation) of synthesis layer `index`.
    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index]
    }

    /// Vector-Jacobian product of the synthesized image with respect to the
    /// style matrix and the noise set.
    pub fn backward(
        &self,
        weights: &GeneratorWeights,
        transform: &TransformParams,
        upstream: &[f64],
    ) -> Result<(LatentStyleMatrix, LatentNoiseSet)> {
        let cfg = &weights.config;
        check_len("upstream gradient", self.image.len(), upstream.len())?;
        if upstream.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("upstream gradient".into()));
        }
        let c = cfg.channels;
        let slope = cfg.leaky_slope;
        let mut grad_styles = LatentStyleMatrix::zeros(cfg.latent_dim, cfg.layers);
        let mut grad_noise = LatentNoiseSet::zeros(cfg.layers);

        let plane = self.image.len();
        let mut d_out = vec![0.0; c * plane];
        for p in 0..plane {
            let s = self.logistic[p];
            let d_pre = upstream[p] * (1.0 - 2.0 * SQUASH_MARGIN) * s * (1.0 - s);
            for ch in 0..c {
                d_out[ch * plane + p] = weights.head_weight[ch] * d_pre;
            }
        }

        for i in (0..cfg.layers).rev() {
            let layer = &weights.layers[i];
            let res = self.resolutions[i];
            let plane = res * res;
            let modulation = &self.modulation[i];
            let normalized = &self.normalized[i];
            let y = &self.conv_out[i];

            let mut d_mod = vec![0.0; 2 * c];
            let mut d_y = vec![0.0; c * plane];
            for ch in 0..c {
                let go = &d_out[ch * plane..(ch + 1) * plane];
                let n = &normalized[ch * plane..(ch + 1) * plane];
                d_mod[ch] = go.iter().zip(n).map(|(g, n)| g * n).sum();
                d_mod[c + ch] = go.iter().sum();

                let scale = 1.0 + modulation[ch];
                let mean_dn = scale * d_mod[c + ch] / plane as f64;
                let mean_dn_n = scale * d_mod[ch] / plane as f64;
                let is = self.inv_std[i][ch];
                for p in 0..plane {
                    let d_a = is * (scale * go[p] - mean_dn - n[p] * mean_dn_n);
                    let idx = ch * plane + p;
                    d_y[idx] = if y[idx] >= 0.0 { d_a } else { slope * d_a };
                }
            }

            let d_phi = grad_noise.get_mut(i);
            for ch in d_y.chunks_exact(plane) {
                d_phi
                    .iter_mut()
                    .zip(ch)
                    .for_each(|(d, g)| *d += layer.noise_scale * g);
            }

            let mut d_w = vec![0.0; cfg.latent_dim];
            for (row, g) in layer.style_weight.chunks_exact(cfg.latent_dim).zip(&d_mod) {
                d_w.iter_mut().zip(row).for_each(|(d, a)| *d += a * g);
            }
            let d_v = transform.inverse_vjp(&self.style_pre[i], &d_w);
            grad_styles.column_mut(i).copy_from_slice(&d_v);

            if i > 0 {
                let mut d_in = vec![0.0; c * plane];
                conv3x3_transpose(&d_y, c, res, &layer.kernel, &mut d_in);
                d_out = if res > self.resolutions[i - 1] {
                    upsample2_adjoint(&d_in, c, self.resolutions[i - 1])
                } else {
                    d_in
                };
            }
        }
        Ok((grad_styles, grad_noise))
    }
}

/// `G̃(V, Φ)`.
pub fn synthesize(
    weights: &GeneratorWeights,
    transform: &TransformParams,
    styles: &LatentStyleMatrix,
    noise: &LatentNoiseSet,
) -> Result<ObjectImage> {
    Ok(ForwardPass::run(weights, transform, styles, noise)?.to_image())
}

/// Gradient of `⟨upstream, G̃(V, Φ)⟩` with respect to `V` and `Φ`.
pub fn generator_grad(
    weights: &GeneratorWeights,
    transform: &TransformParams,
    styles: &LatentStyleMatrix,
    noise: &LatentNoiseSet,
    upstream: &[f64],
) -> Result<(LatentStyleMatrix, LatentNoiseSet)> {
    ForwardPass::run(weights, transform, styles, noise)?.backward(weights, transform, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{fit_transform, init_generator, GeneratorConfig};
    use crate::rng;

    fn setup() -> (GeneratorWeights, TransformParams) {
        let w = init_generator(&GeneratorConfig::default(), 3).unwrap();
        let t = fit_transform(&w, 2_000, 4).unwrap();
        (w, t)
    }

    fn random_state(seed: u64) -> (LatentStyleMatrix, LatentNoiseSet) {
        let mut r = rng::stream(seed);
        let v = LatentStyleMatrix::new(64, 8, rng::standard_normals(&mut r, 512)).unwrap();
        let total = LatentNoiseSet::zeros(8).total_len();
        let phi = LatentNoiseSet::from_flat(8, &rng::standard_normals(&mut r, total)).unwrap();
        (v, phi)
    }

    #[test]
    fn conv_transpose_is_adjoint() {
        let mut r = rng::stream(1);
        let (c, res) = (3, 5);
        let x = rng::standard_normals(&mut r, c * res * res);
        let g = rng::standard_normals(&mut r, c * res * res);
        let k = rng::standard_normals(&mut r, c * c * 9);
        let mut kx = vec![0.0; x.len()];
        conv3x3(&x, c, res, &k, &[0.0; 3], &mut kx);
        let mut ktg = vec![0.0; x.len()];
        conv3x3_transpose(&g, c, res, &k, &mut ktg);
        let lhs: f64 = kx.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ktg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

        let u = upsample2(&x, c, res);
        let gu = rng::standard_normals(&mut r, u.len());
        let lhs: f64 = u.iter().zip(&gu).map(|(a, b)| a * b).sum();
        let rhs: f64 = x
            .iter()
            .zip(upsample2_adjoint(&gu, c, res))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn synthesis_is_deterministic_and_in_range() {
        let (w, t) = setup();
        for seed in 0..100 {
            let (v, phi) = random_state(seed);
            let a = synthesize(&w, &t, &v, &phi).unwrap();
            if seed == 0 {
                let b = synthesize(&w, &t, &v, &phi).unwrap();
                assert_eq!(a, b);
            }
            assert_eq!((a.width(), a.height()), (32, 32));
            assert!(a.pixels().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn last_noise_vector_only_touches_last_layer() {
        let (w, t) = setup();
        let (v, phi) = random_state(1);
        let mut phi2 = phi.clone();
        phi2.get_mut(7)[100] += 1.0;
        let a = ForwardPass::run(&w, &t, &v, &phi).unwrap();
        let b = ForwardPass::run(&w, &t, &v, &phi2).unwrap();
        for i in 0..7 {
            assert_eq!(a.features(i), b.features(i));
        }
        assert_ne!(a.image(), b.image());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (w, t) = setup();
        let v = LatentStyleMatrix::zeros(64, 6);
        assert!(synthesize(&w, &t, &v, &LatentNoiseSet::zeros(8)).is_err());
        let (v, phi) = random_state(2);
        assert!(generator_grad(&w, &t, &v, &phi, &[0.0; 10]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (w, t) = setup();
        let (v, phi) = random_state(2);
        let (gv, gp) = generator_grad(&w, &t, &v, &phi, &[0.0; 1024]).unwrap();
        assert!(gv.as_slice().iter().all(|&g| g == 0.0));
        assert!(gp.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_noise_layer_has_zero_gradient() {
        let (mut w, t) = setup();
        w.layers[4].noise_scale = 0.0;
        let (v, phi) = random_state(3);
        let mut r = rng::stream(4);
        let up = rng::standard_normals(&mut r, 1024);
        let (_, gp) = generator_grad(&w, &t, &v, &phi, &up).unwrap();
        assert!(gp.get(4).iter().all(|&g| g == 0.0));
        assert!(gp.get(5).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (w, t) = setup();
        let (v, phi) = random_state(5);
        let mut r = rng::stream(6);
        let up = rng::standard_normals(&mut r, 1024);
        let (gv, gp) = generator_grad(&w, &t, &v, &phi, &up).unwrap();
        let objective = |v: &LatentStyleMatrix, phi: &LatentNoiseSet| -> f64 {
            let img = synthesize(&w, &t, v, phi).unwrap();
            img.pixels().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for idx in (0..512).step_by(37) {
            let mut p = v.clone();
            let mut m = v.clone();
            p.as_mut_slice()[idx] += h;
            m.as_mut_slice()[idx] -= h;
            let fd = (objective(&p, &phi) - objective(&m, &phi)) / (2.0 * h);
            let g = gv.as_slice()[idx];
            assert!(
                (fd - g).abs() <= 1e-4 * g.abs().max(1e-6),
                "style {idx}: {fd} vs {g}"
            );
        }
        let flat = phi.flatten();
        let gflat = gp.flatten();
        for idx in (0..flat.len()).step_by(211) {
            let mut p = flat.clone();
            let mut m = flat.clone();
            p[idx] += h;
            m[idx] -= h;
            let fd = (objective(&v, &LatentNoiseSet::from_flat(8, &p).unwrap())
                - objective(&v, &LatentNoiseSet::from_flat(8, &m).unwrap()))
                / (2.0 * h);
            let g = gflat[idx];
            assert!(
                (fd - g).abs() <= 1e-4 * g.abs().max(1e-6),
                "noise {idx}: {fd} vs {g}"
            );
        }
    }
}
