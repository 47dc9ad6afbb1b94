use std::sync::Arc;

use anyhow::Result;
use pulsepp_core::generator::{sample_latents, synthesize, ObjectImage};
use pulsepp_core::imaging::{
    add_complex_gaussian, add_poisson, build_fanbeam, make_cartesian_mask, phantom_generate,
    xray_intensity, FourierOperator, Measurement,
};
use pulsepp_core::rng::derive_seed;
use serde_json::json;

use super::{load_model, Invocation, MeasurementFile, Outcome, MEASUREMENT_FILE, TRUTH_STEM};
use crate::config::{MeasurementConfig, RunConfig, TargetConfig};
use crate::manifest::{header, OutputDir};
use crate::raster::FloatRaster;

/// Seeds of the mask, the noise and the target, all derived from `seed`.
pub fn simulate_seeds(seed: u64) -> (u64, u64, u64) {
    (
        derive_seed(seed, 1),
        derive_seed(seed, 2),
        derive_seed(seed, 3),
    )
}

/// Draws a true object, simulates noisy data and writes both.
pub fn cmd_simulate(cfg: &RunConfig, inv: &Invocation) -> Result<Outcome> {
    let model = load_model(cfg)?;
    let (mask_seed, noise_seed, target_seed) = simulate_seeds(cfg.seed);
    let (w, h) = cfg.measurement.image_size();

    let truth = match &cfg.target {
        TargetConfig::Generator => {
            let (styles, noise) = sample_latents(&model.weights, &model.transform, target_seed);
            synthesize(&model.weights, &model.transform, &styles, &noise)?
        }
        TargetConfig::Phantom { phantom } => phantom_generate(*phantom, w, h, target_seed)?,
    };

    let (measurement, geometry) = match &cfg.measurement {
        MeasurementConfig::Fourier(f) => {
            let mask = make_cartesian_mask(
                f.width,
                f.height,
                f.acceleration,
                f.center_fraction,
                mask_seed,
            )?;
            let op = FourierOperator::new(mask)?;
            let data = add_complex_gaussian(&op.forward(truth.pixels())?, f.sigma, noise_seed)?;
            (Measurement::Fourier { op, data }, None)
        }
        MeasurementConfig::FanBeam(c) => {
            let geometry = c.geometry();
            let hm = build_fanbeam(&geometry)?;
            let mean = xray_intensity(&hm, truth.pixels(), c.i0, c.mu_max)?;
            let data = add_poisson(&mean, c.i0, c.mu_max, noise_seed)?;
            (
                Measurement::Transmission {
                    h: Arc::new(hm),
                    data,
                },
                Some(geometry),
            )
        }
    };
    let file = MeasurementFile::from_measurement(&measurement, geometry.as_ref())?;
    let m = measurement.sample_count();
    let j_truth = measurement.fidelity(truth.pixels())?.0;

    let mut out = OutputDir::create(inv.out_dir(cfg, "simulate"))?;
    out.raster(TRUTH_STEM, &FloatRaster::gray(w, h, truth.pixels())?, 1.0)?;
    out.write_json(MEASUREMENT_FILE, &file)?;

    let mut manifest = header("simulate", cfg)?;
    manifest.insert("weights_sha256".into(), json!(model.weights_sha256));
    manifest.insert(
        "seeds".into(),
        json!({"master": cfg.seed, "mask": mask_seed, "noise": noise_seed, "target": target_seed}),
    );
    manifest.insert("sample_count".into(), json!(m));
    manifest.insert("pixel_count".into(), json!(w * h));
    manifest.insert("fidelity_truth".into(), json!(j_truth));
    match &file {
        MeasurementFile::Fourier { mask, sigma, .. } => {
            manifest.insert("acceptance".into(), json!("gaussian_morozov"));
            manifest.insert("epsilon".into(), json!(0.5 * m as f64));
            manifest.insert("sigma".into(), json!(sigma));
            manifest.insert(
                "realized_acceleration".into(),
                json!(mask.realized_acceleration()),
            );
        }
        MeasurementFile::FanBeam {
            i0,
            mu_max,
            geometry,
            ..
        } => {
            // ε_n depends on the embedding of the truth and is computed by `sample`.
            manifest.insert("acceptance".into(), json!("poisson_embedding"));
            manifest.insert("epsilon".into(), json!(null));
            manifest.insert("i0".into(), json!(i0));
            manifest.insert("mu_max".into(), json!(mu_max));
            manifest.insert("views".into(), json!(geometry.angles_deg.len()));
        }
    }
    eprintln!("simulate: M = {m}, J(g, f_true) = {j_truth:.3}");
    out.finish(manifest)?;
    Ok(Outcome::Success)
}

/// Reads the truth raster written by `simulate`.
pub fn load_truth(dir: &std::path::Path) -> Result<ObjectImage> {
    let r = crate::raster::raster_read(dir.join(format!("{TRUTH_STEM}.lmfr")))?;
    Ok(ObjectImage::new(
        r.width as usize,
        r.height as usize,
        r.pixels_f64(),
    )?)
}
