use anyhow::{Context, Result};
use pulsepp_core::analysis::{fidelity_summary, uncertainty_report};
use serde_json::{json, Value};

use super::{load_manifest, pool, Invocation, MeasurementFile, Outcome};
use crate::config::RunConfig;
use crate::manifest::{header, sha256_hex, to_json_bytes, OutputDir};
use crate::raster::{raster_read, FloatRaster};

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const MAP_STEMS: [&str; 3] = ["std_full", "std_measurable", "std_null"];

/// Uncertainty maps and figures of merit over the accepted solutions in a
/// `sample` directory.
pub fn cmd_analyze(cfg: &RunConfig, inv: &Invocation) -> Result<Outcome> {
    let input = inv.input_dir(cfg, "sample");
    let run = load_manifest(&input, "sample")?;
    let restarts = run["restarts"]
        .as_array()
        .context("sample manifest lacks `restarts`")?;
    let epsilon = run["epsilon"]
        .as_f64()
        .context("sample manifest lacks `epsilon`")?;

    let files: Vec<&str> = restarts.iter().filter_map(|r| r["file"].as_str()).collect();
    if files.len() < 2 {
        eprintln!(
            "analyze: {} accepted solution(s), at least 2 are needed",
            files.len()
        );
        return Ok(Outcome::Empty);
    }
    let fidelities: Vec<f64> = restarts
        .iter()
        .filter_map(|r| r["fidelity"].as_f64())
        .collect();
    let summary = fidelity_summary(&fidelities, epsilon)?;

    let (file, _) = MeasurementFile::load(&input)?;
    let (w, h) = file.image_size();
    let measurement = file.to_measurement()?;
    let mut solutions = Vec::with_capacity(files.len());
    for name in &files {
        let r = raster_read(input.join(name))?;
        anyhow::ensure!(
            (r.width as usize, r.height as usize) == (w, h),
            "{name} is {}×{}, expected {w}×{h}",
            r.width,
            r.height
        );
        solutions.push(r.pixels_f64());
    }

    let (tol, max_iter) = (cfg.analysis.tol, cfg.analysis.max_iter);
    let report = pool(inv.workers)?
        .install(|| uncertainty_report(&solutions, measurement.operator(), tol, max_iter))?;

    let maps = [&report.std_full, &report.std_measurable, &report.std_null];
    let peak = maps
        .iter()
        .flat_map(|m| m.iter())
        .fold(0.0_f64, |a, &b| a.max(b));
    // PGM previews share one scale so the three maps are comparable.
    let scale = if peak > 0.0 { (1.0 / peak) as f32 } else { 1.0 };

    let mut out = OutputDir::create(inv.out_dir(cfg, "analyze"))?;
    for (stem, map) in MAP_STEMS.iter().zip(maps) {
        out.raster(stem, &FloatRaster::gray(w, h, map)?, scale)?;
    }
    let analysis = json!({
        "solution_count": report.solution_count,
        "solutions": files,
        "std_denominator": "population",
        "fom_full": report.fom_full,
        "fom_measurable": report.fom_measurable,
        "fom_null": report.fom_null,
        "additivity_gap": report.additivity_gap(),
        "null_dominant": report.fom_null > report.fom_measurable,
        "cg": {
            "tol": report.tol,
            "max_iter": report.max_iter,
            "max_iterations": report.max_iterations,
            "max_data_residual": report.max_data_residual,
        },
        "fidelity": summary,
        "pgm_scale": scale,
    });
    out.write_json(ANALYSIS_FILE, &analysis)?;

    let mut manifest = header("analyze", cfg)?;
    manifest.insert(
        "input_manifest_sha256".into(),
        json!(sha256_hex(&to_json_bytes(&run)?)),
    );
    for key in ["weights_sha256", "sample_count", "epsilon", "master_seed"] {
        manifest.insert(key.into(), run.get(key).cloned().unwrap_or(Value::Null));
    }
    manifest.insert(
        "seeds".into(),
        json!(restarts
            .iter()
            .map(|r| r["seed"].clone())
            .collect::<Vec<_>>()),
    );
    out.finish(manifest)?;
    eprintln!(
        "analyze: FOM full {:.4e}, measurable {:.4e}, null {:.4e}",
        report.fom_full, report.fom_measurable, report.fom_null
    );
    Ok(Outcome::Success)
}
