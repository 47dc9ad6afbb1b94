use anyhow::{bail, ensure, Result};
use pulsepp_core::sampler::{
    acceptance_threshold, embedding_seed, empirical_sample, AcceptanceMode, LatentModel,
};
use serde_json::json;

use super::simulate::load_truth;
use super::{
    annulus_for, load_manifest, load_model, Invocation, MeasurementFile, Outcome, MEASUREMENT_FILE,
};
use crate::config::RunConfig;
use crate::manifest::{header, sha256_hex, to_json_bytes, OutputDir};
use crate::raster::FloatRaster;

pub fn solution_stem(index: usize) -> String {
    format!("solution_{index:03}")
}

/// Runs the restarts against the data in the `simulate` directory and
/// writes every accepted solution.
pub fn cmd_sample(cfg: &RunConfig, inv: &Invocation) -> Result<Outcome> {
    let input = inv.input_dir(cfg, "simulate");
    let sim = load_manifest(&input, "simulate")?;
    let model = load_model(cfg)?;
    if sim["weights_sha256"] != model.weights_sha256.as_str() {
        bail!(
            "weights hash {} does not match {} recorded by simulate in {}",
            model.weights_sha256,
            sim["weights_sha256"],
            input.display()
        );
    }
    let (file, file_bytes) = MeasurementFile::load(&input)?;
    let (w, h) = file.image_size();
    let side = cfg.generator.core().output_resolution();
    ensure!(
        (w, h) == (side, side),
        "measurement images are {w}×{h} but the generator produces {side}×{side}"
    );
    match (&file, cfg.sampler.acceptance) {
        (MeasurementFile::Fourier { .. }, AcceptanceMode::GaussianMorozov)
        | (MeasurementFile::FanBeam { .. }, AcceptanceMode::PoissonEmbedding) => {}
        _ => bail!(
            "sampler.acceptance {:?} does not fit the stored measurement",
            cfg.sampler.acceptance
        ),
    }
    let measurement = file.to_measurement()?;

    let annulus = annulus_for(cfg, &model)?;
    let latent = LatentModel {
        weights: &model.weights,
        transform: &model.transform,
        annulus: Some(&annulus),
    };
    let (epsilon, epsilon_source) = match inv.epsilon {
        Some(e) => {
            ensure!(e >= 0.0 && !e.is_nan(), "--epsilon must be ≥ 0");
            (e, "override")
        }
        None => {
            let truth = match cfg.sampler.acceptance {
                AcceptanceMode::PoissonEmbedding => Some(load_truth(&input)?),
                AcceptanceMode::GaussianMorozov => None,
            };
            let e = acceptance_threshold(&cfg.sampler, &measurement, truth.as_ref(), &latent)?;
            let source = match cfg.sampler.acceptance {
                AcceptanceMode::GaussianMorozov => "gaussian_morozov",
                AcceptanceMode::PoissonEmbedding => "poisson_embedding",
            };
            (e, source)
        }
    };
    eprintln!(
        "sample: {} × {} steps of {}, ε_n = {epsilon:.3}",
        cfg.sampler.restarts,
        cfg.sampler.n_steps,
        cfg.sampler.variant.name()
    );
    let set = empirical_sample(&cfg.sampler, &measurement, &latent, epsilon, inv.workers)?;

    let mut out = OutputDir::create(inv.out_dir(cfg, "sample"))?;
    out.write(MEASUREMENT_FILE, &file_bytes)?;
    let mut restarts = Vec::with_capacity(set.restarts.len());
    for r in &set.restarts {
        let file = if r.accepted {
            let stem = solution_stem(r.index);
            out.raster(&stem, &FloatRaster::gray(w, h, &r.image)?, 1.0)?;
            json!(format!("{stem}.lmfr"))
        } else {
            json!(null)
        };
        let finite = |x: f64| if x.is_finite() { json!(x) } else { json!(null) };
        restarts.push(json!({
            "index": r.index,
            "seed": r.seed,
            "objective": finite(r.objective),
            "initial_objective": finite(r.initial_objective),
            "fidelity": finite(r.fidelity),
            "best_step": r.best_step,
            "accepted": r.accepted,
            "failure": r.failure,
            "file": file,
        }));
    }

    let accepted = set.accepted_count();
    let mut manifest = header("sample", cfg)?;
    manifest.insert("weights_sha256".into(), json!(model.weights_sha256));
    manifest.insert(
        "input_manifest_sha256".into(),
        json!(sha256_hex(&to_json_bytes(&sim)?)),
    );
    manifest.insert("sample_count".into(), json!(measurement.sample_count()));
    manifest.insert("epsilon".into(), json!(epsilon));
    manifest.insert("epsilon_source".into(), json!(epsilon_source));
    if epsilon_source == "poisson_embedding" {
        manifest.insert(
            "embedding_seed".into(),
            json!(embedding_seed(cfg.sampler.seed)),
        );
    }
    manifest.insert("annulus".into(), serde_json::to_value(annulus)?);
    manifest.insert("master_seed".into(), json!(cfg.sampler.seed));
    manifest.insert("accepted_count".into(), json!(accepted));
    manifest.insert("restarts".into(), json!(restarts));
    out.finish(manifest)?;

    eprintln!("sample: accepted {accepted}/{}", set.restarts.len());
    Ok(if accepted == 0 {
        Outcome::Empty
    } else {
        Outcome::Success
    })
}
