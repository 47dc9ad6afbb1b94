//! Subcommand implementations and the state they share.

mod analyze;
mod sample;
mod simulate;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use num_complex::Complex64;
use pulsepp_core::generator::{
    fit_transform, init_generator, load_weights, sample_latent_norm_sq, weights_to_bytes,
    GeneratorWeights, TransformParams,
};
use pulsepp_core::imaging::{
    build_fanbeam, CartesianMask, FanBeamGeometry, FourierOperator, IntensityData, KSpaceData,
    Measurement,
};
use pulsepp_core::latent::{calibrate_annulus, AnnulusSpec, NormEcdf};
use serde::{Deserialize, Serialize};

pub use analyze::cmd_analyze;
pub use sample::cmd_sample;
pub use simulate::cmd_simulate;
pub use validate::{cmd_validate_latents, gaussian_norm_sq, CONTROL_KS_BOUND};

use crate::config::RunConfig;
use crate::manifest::{read_json, sha256_hex, to_json_bytes};

pub const MEASUREMENT_FILE: &str = "measurement.json";
pub const TRUTH_STEM: &str = "truth";

/// How a command ended when it did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Valid run with nothing to report: no accepted solutions, or too few
    /// solutions to analyze.
    Empty,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Empty => 2,
        }
    }
}

/// Settings that come from flags rather than the config file.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub workers: usize,
    pub epsilon: Option<f64>,
}

impl Invocation {
    fn out_dir(&self, cfg: &RunConfig, command: &str) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| cfg.output_dir.join(command))
    }

    fn input_dir(&self, cfg: &RunConfig, producer: &str) -> PathBuf {
        self.input
            .clone()
            .unwrap_or_else(|| cfg.output_dir.join(producer))
    }
}

/// Generator weights, their hash, and the fitted transform.
pub struct Model {
    pub weights: GeneratorWeights,
    pub weights_sha256: String,
    pub transform: TransformParams,
}

pub fn load_model(cfg: &RunConfig) -> Result<Model> {
    let expected = cfg.generator.core();
    let weights = match &cfg.generator.weights {
        Some(path) => {
            let w = load_weights(path)
                .with_context(|| format!("loading weights {}", path.display()))?;
            ensure!(
                w.config == expected,
                "generator: weights file {} has config {:?}, config asks for {:?}",
                path.display(),
                w.config,
                expected
            );
            w
        }
        None => init_generator(&expected, cfg.generator.seed)?,
    };
    let weights_sha256 = sha256_hex(&weights_to_bytes(&weights));
    let transform = fit_transform(&weights, cfg.transform.n_samples, cfg.transform.seed)?;
    Ok(Model {
        weights,
        weights_sha256,
        transform,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnulusCacheEntry {
    weights_sha256: String,
    transform_n_samples: usize,
    transform_seed: u64,
    n_samples: usize,
    seed: u64,
    gamma: f64,
    spec: AnnulusSpec,
}

/// Calibrates the annulus, or loads it from `<output_dir>/cache` when the
/// weights hash, sample count, seed and `γ` all match.
pub fn annulus_for(cfg: &RunConfig, model: &Model) -> Result<AnnulusSpec> {
    let mut entry = AnnulusCacheEntry {
        weights_sha256: model.weights_sha256.clone(),
        transform_n_samples: cfg.transform.n_samples,
        transform_seed: cfg.transform.seed,
        n_samples: cfg.annulus.n_samples,
        seed: cfg.annulus.seed,
        gamma: cfg.sampler.gamma,
        spec: AnnulusSpec::new(0.0, 1.0, cfg.sampler.gamma)?,
    };
    let key = format!(
        "{}:{}:{}:{}:{}:{:e}",
        entry.weights_sha256,
        entry.transform_n_samples,
        entry.transform_seed,
        entry.n_samples,
        entry.seed,
        entry.gamma
    );
    let dir = cfg.output_dir.join("cache");
    let path = dir.join(format!(
        "annulus-{}.json",
        &sha256_hex(key.as_bytes())[..16]
    ));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(hit) = serde_json::from_str::<AnnulusCacheEntry>(&text) {
            let same = hit.weights_sha256 == entry.weights_sha256
                && hit.transform_n_samples == entry.transform_n_samples
                && hit.transform_seed == entry.transform_seed
                && hit.n_samples == entry.n_samples
                && hit.seed == entry.seed
                && hit.gamma == entry.gamma;
            if same {
                eprintln!("annulus: cached {}", path.display());
                return Ok(hit.spec);
            }
        }
    }
    let norms: Vec<f64> = sample_latent_norm_sq(
        &model.weights,
        &model.transform,
        cfg.annulus.n_samples,
        cfg.annulus.seed,
    )
    .into_iter()
    .map(f64::sqrt)
    .collect();
    entry.spec = calibrate_annulus(&NormEcdf::build(&norms)?, cfg.sampler.gamma)?;
    // A failed cache write only costs a recalibration next time.
    if fs::create_dir_all(&dir).is_ok() && fs::write(&path, to_json_bytes(&entry)?).is_ok() {
        eprintln!("annulus: calibrated, cached {}", path.display());
    }
    Ok(entry.spec)
}

/// The on-disk measurement: data plus everything needed to rebuild `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementFile {
    Fourier {
        mask: CartesianMask,
        sigma: f64,
        /// `[re, im]` pairs.
        samples: Vec<[f64; 2]>,
    },
    FanBeam {
        geometry: FanBeamGeometry,
        i0: f64,
        mu_max: f64,
        counts: Vec<f64>,
    },
}

impl MeasurementFile {
    pub fn from_measurement(m: &Measurement, geometry: Option<&FanBeamGeometry>) -> Result<Self> {
        Ok(match m {
            Measurement::Fourier { op, data } => MeasurementFile::Fourier {
                mask: op.mask().clone(),
                sigma: data.sigma,
                samples: data.samples.iter().map(|z| [z.re, z.im]).collect(),
            },
            Measurement::Transmission { data, .. } => MeasurementFile::FanBeam {
                geometry: geometry
                    .context("fan-beam measurement needs its geometry")?
                    .clone(),
                i0: data.i0,
                mu_max: data.mu_max,
                counts: data.counts.clone(),
            },
        })
    }

    pub fn to_measurement(&self) -> Result<Measurement> {
        Ok(match self {
            MeasurementFile::Fourier {
                mask,
                sigma,
                samples,
            } => {
                let op = FourierOperator::new(mask.clone())?;
                ensure!(
                    samples.len() == op.sample_count(),
                    "measurement has {} samples, mask implies {}",
                    samples.len(),
                    op.sample_count()
                );
                Measurement::Fourier {
                    op,
                    data: KSpaceData {
                        samples: samples
                            .iter()
                            .map(|&[re, im]| Complex64::new(re, im))
                            .collect(),
                        sigma: *sigma,
                    },
                }
            }
            MeasurementFile::FanBeam {
                geometry,
                i0,
                mu_max,
                counts,
            } => {
                let h = build_fanbeam(geometry)?;
                ensure!(
                    counts.len() == h.rows(),
                    "measurement has {} counts, geometry implies {} rays",
                    counts.len(),
                    h.rows()
                );
                Measurement::Transmission {
                    h: Arc::new(h),
                    data: IntensityData::new(counts.clone(), *i0, *mu_max)?,
                }
            }
        })
    }

    pub fn image_size(&self) -> (usize, usize) {
        match self {
            MeasurementFile::Fourier { mask, .. } => (mask.width, mask.height),
            MeasurementFile::FanBeam { geometry, .. } => (geometry.n_pix, geometry.n_pix),
        }
    }

    pub fn load(dir: &Path) -> Result<(Self, Vec<u8>)> {
        let path = dir.join(MEASUREMENT_FILE);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let file = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok((file, bytes))
    }
}

/// The manifest a previous command wrote into `dir`, checked for its
/// producing command.
pub fn load_manifest(dir: &Path, command: &str) -> Result<serde_json::Value> {
    let path = dir.join(crate::manifest::MANIFEST);
    let m = read_json(&path)?;
    if m["command"] != command {
        bail!("{} was not written by `{command}`", path.display());
    }
    Ok(m)
}

/// A rayon pool with `workers` threads (`0` = all cores).
pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building thread pool")
}
