//! Run configuration: JSON, unknown keys rejected, every field defaulted.
//!
//! A configuration is resolved in three layers: built-in defaults, an
//! optional named preset, then the user's file. Later layers are merged
//! key by key; a block whose `kind` changes is replaced wholesale.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pulsepp_core::analysis::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use pulsepp_core::generator::GeneratorConfig;
use pulsepp_core::imaging::{FanBeamGeometry, PhantomKind, DEFAULT_MU_MAX};
use pulsepp_core::sampler::{AcceptanceMode, SamplerConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of `simulate` (mask, noise and target).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorBlock,
    #[serde(default)]
    pub transform: TransformBlock,
    #[serde(default)]
    pub annulus: AnnulusBlock,
    #[serde(default)]
    pub validate: ValidateBlock,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("empty config is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorBlock {
    pub latent_dim: usize,
    pub layers: usize,
    pub channels: usize,
    pub mapping_depth: usize,
    pub leaky_slope: f64,
    /// Seed of the random initialization when no weights file is given.
    pub seed: u64,
    pub weights: Option<PathBuf>,
}

impl Default for GeneratorBlock {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            latent_dim: g.latent_dim,
            layers: g.layers,
            channels: g.channels,
            mapping_depth: g.mapping_depth,
            leaky_slope: g.leaky_slope,
            seed: 1,
            weights: None,
        }
    }
}

impl GeneratorBlock {
    pub fn core(&self) -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: self.latent_dim,
            layers: self.layers,
            channels: self.channels,
            mapping_depth: self.mapping_depth,
            leaky_slope: self.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformBlock {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for TransformBlock {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnulusBlock {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for AnnulusBlock {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateBlock {
    pub n_samples: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            bins: 100,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementConfig {
    Fourier(FourierBlock),
    FanBeam(FanBeamBlock),
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig::Fourier(FourierBlock::default())
    }
}

impl MeasurementConfig {
    pub fn image_size(&self) -> (usize, usize) {
        match self {
            MeasurementConfig::Fourier(f) => (f.width, f.height),
            MeasurementConfig::FanBeam(c) => (c.n_pix, c.n_pix),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FourierBlock {
    pub width: usize,
    pub height: usize,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub sigma: f64,
}

impl Default for FourierBlock {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            acceleration: 2.0,
            center_fraction: 0.08,
            sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FanBeamBlock {
    pub n_pix: usize,
    pub pixel_mm: f64,
    pub views: usize,
    pub i0: f64,
    pub mu_max: f64,
}

impl Default for FanBeamBlock {
    fn default() -> Self {
        Self {
            n_pix: 32,
            pixel_mm: 1.0,
            views: 40,
            i0: 1e5,
            mu_max: DEFAULT_MU_MAX,
        }
    }
}

impl FanBeamBlock {
    pub fn geometry(&self) -> FanBeamGeometry {
        FanBeamGeometry::scaled(self.n_pix, self.pixel_mm, self.views)
    }
}

/// The true object of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// `G̃(V*, Φ*)` with one mapped style vector shared by every layer.
    Generator,
    Phantom {
        phantom: PhantomKind,
    },
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig::Generator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisBlock {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

pub const PRESETS: [&str; 2] = ["mri_toy", "ct_toy"];

/// Desk-scale analogues of the MRI and CT studies.
pub fn preset(name: &str) -> Result<Value> {
    match name {
        "mri_toy" => Ok(json!({
            "measurement": {"kind": "fourier", "width": 32, "height": 32,
                            "acceleration": 2.0, "center_fraction": 0.08, "sigma": 0.05},
            "target": {"kind": "generator"},
            "sampler": {"variant": "pulse_pp", "acceptance": "gaussian_morozov"},
        })),
        "ct_toy" => Ok(json!({
            "measurement": {"kind": "fan_beam", "n_pix": 32, "pixel_mm": 1.0, "views": 40,
                            "i0": 1e5, "mu_max": DEFAULT_MU_MAX},
            "target": {"kind": "phantom", "phantom": "ellipses"},
            "sampler": {"variant": "pulse_pp", "acceptance": "poisson_embedding"},
            "analysis": {"max_iter": 5000},
        })),
        other => bail!(
            "unknown preset {other:?} (available: {})",
            PRESETS.join(", ")
        ),
    }
}

/// Recursive object merge; `over` wins. Objects with differing `kind`
/// tags are not merged.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retag = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                b.clear();
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Deserializes a resolved JSON value, reporting the key path of any error.
pub fn from_value(value: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            anyhow!("{}", e.inner())
        } else {
            anyhow!("{path}: {}", e.inner())
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_str(text: &str, preset_name: Option<&str>) -> Result<RunConfig> {
    let user: Value = serde_json::from_str(text).context("config is not valid JSON")?;
    if !user.is_object() {
        bail!("config must be a JSON object");
    }
    // A block that omits `kind` keeps the default one.
    let mut value = json!({"measurement": {"kind": "fourier"}, "target": {"kind": "generator"}});
    if let Some(name) = preset_name {
        merge(&mut value, preset(name)?);
    }
    merge(&mut value, user);
    from_value(value)
}

/// Reads and validates a config file; relative weight paths resolve
/// against the file's directory.
pub fn parse_config(path: Option<&Path>, preset_name: Option<&str>) -> Result<RunConfig> {
    let Some(path) = path else {
        return parse_str("{}", preset_name);
    };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = parse_str(&text, preset_name)
        .with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(w) = &cfg.generator.weights {
        if w.is_relative() {
            cfg.generator.weights = Some(path.parent().unwrap_or(Path::new(".")).join(w));
        }
    }
    Ok(cfg)
}

impl RunConfig {
    /// Range and cross-reference checks; messages lead with the key path.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(anyhow!("{key}: {why}"));
        let g = self.generator.core();
        if let Err(e) = g.validate() {
            return bad("generator", e.to_string());
        }
        if self.transform.n_samples < 10 * g.latent_dim {
            return bad(
                "transform.n_samples",
                format!("must be at least 10·latent_dim = {}", 10 * g.latent_dim),
            );
        }
        if self.annulus.n_samples < 2 {
            return bad("annulus.n_samples", "must be ≥ 2".into());
        }
        if self.validate.n_samples < 2 {
            return bad("validate.n_samples", "must be ≥ 2".into());
        }
        if self.validate.bins == 0 {
            return bad("validate.bins", "must be ≥ 1".into());
        }
        if let Err(e) = self.sampler.validate() {
            let msg = e.to_string();
            let msg = msg.strip_prefix("invalid input: ").unwrap_or(&msg);
            return Err(anyhow!("sampler.{msg}"));
        }
        if !(self.analysis.tol > 0.0 && self.analysis.tol < 1.0) {
            return bad("analysis.tol", "must lie in (0, 1)".into());
        }
        if self.analysis.max_iter == 0 {
            return bad("analysis.max_iter", "must be ≥ 1".into());
        }
        match &self.measurement {
            MeasurementConfig::Fourier(f) => {
                if !(f.acceleration >= 1.0 && f.acceleration.is_finite()) {
                    return bad("measurement.acceleration", "must be finite and ≥ 1".into());
                }
                if !(0.0..=1.0).contains(&f.center_fraction) {
                    return bad("measurement.center_fraction", "must lie in [0, 1]".into());
                }
                if !(f.sigma > 0.0 && f.sigma.is_finite()) {
                    return bad("measurement.sigma", "must be finite and > 0".into());
                }
                if self.sampler.acceptance != AcceptanceMode::GaussianMorozov {
                    return bad(
                        "sampler.acceptance",
                        "Fourier data use gaussian_morozov acceptance".into(),
                    );
                }
            }
            MeasurementConfig::FanBeam(c) => {
                if !(c.pixel_mm > 0.0 && c.pixel_mm.is_finite()) {
                    return bad("measurement.pixel_mm", "must be finite and > 0".into());
                }
                if c.views == 0 {
                    return bad("measurement.views", "must be ≥ 1".into());
                }
                if !(c.i0 > 0.0 && c.i0.is_finite()) {
                    return bad("measurement.i0", "must be finite and > 0".into());
                }
                if !(c.mu_max > 0.0 && c.mu_max.is_finite()) {
                    return bad("measurement.mu_max", "must be finite and > 0".into());
                }
                if self.sampler.acceptance != AcceptanceMode::PoissonEmbedding {
                    return bad(
                        "sampler.acceptance",
                        "fan-beam data use poisson_embedding acceptance".into(),
                    );
                }
            }
        }
        let side = g.output_resolution();
        let (w, h) = self.measurement.image_size();
        if (w, h) != (side, side) {
            return bad(
                "measurement",
                format!("image is {w}×{h} but the generator produces {side}×{side}"),
            );
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        let (w, h) = self.measurement.image_size();
        w * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_str("{}", None).unwrap();
        assert_eq!(cfg.sampler.lr, 0.4);
        assert_eq!(cfg.sampler.n_steps, 2000);
        assert_eq!(cfg.sampler.gamma, 1e-3);
        assert_eq!(cfg.sampler.lambda_c, 0.01);
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn range_error_names_key_path() {
        let err = parse_str(r#"{"sampler": {"gamma": 1.5}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("sampler.gamma"), "{err}");
    }

    #[test]
    fn type_and_unknown_key_errors_name_key_path() {
        let err = parse_str(r#"{"sampler": {"n_steps": "many"}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("sampler.n_steps"), "{err}");
        let err = parse_str(r#"{"sampler": {"gama": 0.1}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("sampler") && err.contains("gama"), "{err}");
        let err = parse_str(r#"{"measurement": {"kind": "fourier", "sigmaa": 1}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("sigmaa"), "{err}");
        assert!(parse_str(r#"{"extra": 1}"#, None).is_err());
    }

    #[test]
    fn round_trip() {
        for p in [None, Some("mri_toy"), Some("ct_toy")] {
            let cfg = parse_str(r#"{"seed": 9, "sampler": {"restarts": 3}}"#, p).unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            let again = parse_str(&text, None).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(serde_json::to_string_pretty(&again).unwrap(), text);
        }
    }

    #[test]
    fn presets_and_overrides() {
        let ct = parse_str(r#"{"measurement": {"i0": 1000}}"#, Some("ct_toy")).unwrap();
        match &ct.measurement {
            MeasurementConfig::FanBeam(c) => {
                assert_eq!((c.i0, c.views, c.n_pix), (1e3, 40, 32));
                assert_eq!(c.geometry().angles_deg.last(), Some(&119.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ct.sampler.acceptance, AcceptanceMode::PoissonEmbedding);
        let switched = parse_str(
            r#"{"measurement": {"kind": "fourier", "acceleration": 4}, "sampler": {"acceptance": "gaussian_morozov"}}"#,
            Some("ct_toy"),
        )
        .unwrap();
        assert!(
            matches!(switched.measurement, MeasurementConfig::Fourier(FourierBlock { acceleration, .. }) if acceleration == 4.0)
        );
        assert!(parse_str("{}", Some("nope")).is_err());
        let untagged = parse_str(r#"{"measurement": {"sigma": 0.07}}"#, None).unwrap();
        assert!(
            matches!(untagged.measurement, MeasurementConfig::Fourier(FourierBlock { sigma, .. }) if sigma == 0.07)
        );
    }

    #[test]
    fn cross_references_are_checked() {
        let err = parse_str(r#"{"measurement": {"width": 16}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("measurement"), "{err}");
        let err = parse_str(r#"{"sampler": {"acceptance": "poisson_embedding"}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("sampler.acceptance"), "{err}");
        let err = parse_str(r#"{"generator": {"layers": 3}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("generator"), "{err}");
    }
}
