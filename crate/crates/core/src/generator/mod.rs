//! A desk-scale style-based generator `G̃(V, Φ) = G_s(T⁻¹(V), Φ)`.
//!
//! The mapping network `G_m` is a stack of fully connected layers; the
//! transform `T` (leaky ReLU followed by affine whitening) maps intermediate
//! latents to the style space where norms are approximately standardized.
//! The synthesis network starts from a learned `C×4×4` constant and applies
//! `L` layers, two per resolution level, each made of
//!
//! ```text
//! [nearest 2× upsample] → conv3×3 → + s_l·φ_l → leaky ReLU → AdaIN(style_l)
//! ```
//!
//! followed by a 1×1 head and a logistic squashing into `(0, 1)`.
//! All parameters are seeded random; nothing here is trained.

mod io;
mod mapping;
mod synthesis;
mod transform;

pub use io::{
    load_weights, save_weights, weights_from_bytes, weights_to_bytes, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
pub use mapping::{mapping_forward, mapping_jvp};
pub use synthesis::{generator_grad, synthesize, ForwardPass};
pub use transform::{
    fit_transform, sample_latent_norm_sq, sample_latents, sample_style_vector, transform_forward,
    transform_inverse, TransformParams,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::latent::noise_dims;
use crate::rng;

pub const BASE_RESOLUTION: usize = 4;
const MAX_LAYERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Latent dimension `k`.
    pub latent_dim: usize,
    /// Synthesis layer count `L` (two per resolution level).
    pub layers: usize,
    /// Feature channels in every synthesis layer.
    pub channels: usize,
    /// Fully connected layers in the mapping network.
    pub mapping_depth: usize,
    pub leaky_slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            layers: 8,
            channels: 8,
            mapping_depth: 4,
            leaky_slope: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be positive"));
        }
        if self.layers < 2 || self.layers % 2 != 0 || self.layers > MAX_LAYERS {
            return Err(Error::invalid(format!(
                "layers must be even and in [2, {MAX_LAYERS}], got {}",
                self.layers
            )));
        }
        if self.channels == 0 || self.mapping_depth == 0 {
            return Err(Error::invalid(
                "channels and mapping_depth must be positive",
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Spatial side length of layer `index` (0-based).
    pub fn layer_resolution(&self, index: usize) -> usize {
        BASE_RESOLUTION << ((index + 1).div_ceil(2) - 1)
    }

    pub fn output_resolution(&self) -> usize {
        self.layer_resolution(self.layers - 1)
    }

    /// `N`, the number of output pixels.
    pub fn pixel_count(&self) -> usize {
        self.output_resolution().pow(2)
    }

    pub fn noise_dims(&self) -> Vec<usize> {
        noise_dims(self.layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisLayer {
    /// `C_out × C_in × 3 × 3`.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    /// Style affine, `2C × k` row-major: rows `0..C` modulate scale, rows
    /// `C..2C` shift.
    pub style_weight: Vec<f64>,
    pub style_bias: Vec<f64>,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub config: GeneratorConfig,
    pub mapping: Vec<DenseLayer>,
    /// Learned `C × 4 × 4` synthesis input.
    pub constant: Vec<f64>,
    pub layers: Vec<SynthesisLayer>,
    pub head_weight: Vec<f64>,
    pub head_bias: f64,
}

impl GeneratorWeights {
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let (k, c) = (cfg.latent_dim, cfg.channels);
        check_len("mapping depth", cfg.mapping_depth, self.mapping.len())?;
        for layer in &self.mapping {
            check_len("mapping weight", k * k, layer.weight.len())?;
            check_len("mapping bias", k, layer.bias.len())?;
        }
        check_len(
            "synthesis constant",
            c * BASE_RESOLUTION * BASE_RESOLUTION,
            self.constant.len(),
        )?;
        check_len("synthesis layers", cfg.layers, self.layers.len())?;
        for layer in &self.layers {
            check_len("conv kernel", c * c * 9, layer.kernel.len())?;
            check_len("conv bias", c, layer.bias.len())?;
            check_len("style weight", 2 * c * k, layer.style_weight.len())?;
            check_len("style bias", 2 * c, layer.style_bias.len())?;
        }
        check_len("head weight", c, self.head_weight.len())?;
        if self
            .parameter_groups()
            .iter()
            .any(|g| g.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite("generator weights".into()));
        }
        Ok(())
    }

    /// All parameter arrays in serialization order.
    pub(crate) fn parameter_groups(&self) -> Vec<Vec<f64>> {
        let mut groups = Vec::new();
        for layer in &self.mapping {
            groups.push(layer.weight.clone());
            groups.push(layer.bias.clone());
        }
        groups.push(self.constant.clone());
        for layer in &self.layers {
            groups.push(layer.kernel.clone());
            groups.push(layer.bias.clone());
            groups.push(layer.style_weight.clone());
            groups.push(layer.style_bias.clone());
            groups.push(vec![layer.noise_scale]);
        }
        groups.push(self.head_weight.clone());
        groups.push(vec![self.head_bias]);
        groups
    }

    pub(crate) fn from_parameter_groups(
        config: GeneratorConfig,
        groups: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let expected = 2 * config.mapping_depth + 1 + 5 * config.layers + 2;
        check_len("parameter groups", expected, groups.len())?;
        let mut it = groups.into_iter();
        let mut next = || it.next().expect("group count checked");
        let mapping = (0..config.mapping_depth)
            .map(|_| DenseLayer {
                weight: next(),
                bias: next(),
            })
            .collect();
        let constant = next();
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let kernel = next();
            let bias = next();
            let style_weight = next();
            let style_bias = next();
            let scale = next();
            check_len("noise scale", 1, scale.len())?;
            layers.push(SynthesisLayer {
                kernel,
                bias,
                style_weight,
                style_bias,
                noise_scale: scale[0],
            });
        }
        let head_weight = next();
        let head_bias = next();
        check_len("head bias", 1, head_bias.len())?;
        let weights = Self {
            config,
            mapping,
            constant,
            layers,
            head_weight,
            head_bias: head_bias[0],
        };
        weights.validate()?;
        Ok(weights)
    }
}

/// Deterministic seeded weights. Every value is rounded to `f32` so that
/// the on-disk format round-trips bitwise.
pub fn init_generator(config: &GeneratorConfig, seed: u64) -> Result<GeneratorWeights> {
    config.validate()?;
    let mut r = rng::stream(seed);
    let mut normal = |n: usize, std: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                (std * z) as f32 as f64
            })
            .collect()
    };
    let (k, c) = (config.latent_dim, config.channels);
    let slope = config.leaky_slope;
    let relu_gain = (2.0 / (1.0 + slope * slope)).sqrt();

    let mapping = (0..config.mapping_depth)
        .map(|i| {
            let gain = if i + 1 == config.mapping_depth {
                1.0
            } else {
                relu_gain
            };
            DenseLayer {
                weight: normal(k * k, gain / (k as f64).sqrt()),
                bias: normal(k, 0.2),
            }
        })
        .collect();

    let constant = normal(c * BASE_RESOLUTION * BASE_RESOLUTION, 1.0);
    let layers = (0..config.layers)
        .map(|i| {
            let kernel = normal(c * c * 9, relu_gain / ((9 * c) as f64).sqrt());
            let bias = normal(c, 0.1);
            let style_weight = normal(2 * c * k, 0.5 / (k as f64).sqrt());
            let style_bias = normal(2 * c, 0.1);
            // Finer layers get more noise so Φ controls detail.
            let noise_scale = (0.3 + 0.4 * i as f64 / (config.layers - 1) as f64) as f32 as f64;
            SynthesisLayer {
                kernel,
                bias,
                style_weight,
                style_bias,
                noise_scale,
            }
        })
        .collect();
    let head_weight = normal(c, 1.5 / (c as f64).sqrt());

    Ok(GeneratorWeights {
        config: *config,
        mapping,
        constant,
        layers,
        head_weight,
        head_bias: 0.0,
    })
}

/// A grayscale object estimate with pixels in the open interval `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ObjectImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        check_len("image", width * height, pixels.len())?;
        if let Some(p) = pixels
            .iter()
            .find(|p| !(p.is_finite() && **p > 0.0 && **p < 1.0))
        {
            return Err(Error::invalid(format!("pixel value {p} outside (0, 1)")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_resolutions() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.output_resolution(), 32);
        assert_eq!(cfg.pixel_count(), 1024);
        let res: Vec<usize> = (0..8).map(|i| cfg.layer_resolution(i)).collect();
        assert_eq!(res, vec![4, 4, 8, 8, 16, 16, 32, 32]);
        for (i, p) in cfg.noise_dims().into_iter().enumerate() {
            assert_eq!(p, cfg.layer_resolution(i).pow(2));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = GeneratorConfig::default();
        cfg.layers = 7;
        assert!(init_generator(&cfg, 0).is_err());
        cfg.layers = 8;
        cfg.leaky_slope = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = GeneratorConfig::default();
        let a = init_generator(&cfg, 42).unwrap();
        let b = init_generator(&cfg, 42).unwrap();
        let c = init_generator(&cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate().unwrap();
    }

    #[test]
    fn object_image_enforces_open_unit_interval() {
        assert!(ObjectImage::new(2, 1, vec![0.5, 1.0]).is_err());
        assert!(ObjectImage::new(2, 1, vec![0.0, 0.5]).is_err());
        assert!(ObjectImage::new(2, 2, vec![0.5; 3]).is_err());
        assert!(ObjectImage::new(2, 1, vec![0.25, 0.75]).is_ok());
    }
}
