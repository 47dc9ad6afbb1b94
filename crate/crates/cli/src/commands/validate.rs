use std::fmt::Write as _;

use anyhow::Result;
use pulsepp_core::analysis::sorted_quantile;
use pulsepp_core::generator::sample_latent_norm_sq;
use pulsepp_core::latent::{chi2_cdf, chi2_pdf, ks_distance, NormEcdf};
use pulsepp_core::rng::{derive_seed, standard_normals, stream};
use serde_json::json;

use super::{load_model, Invocation, Outcome};
use crate::config::RunConfig;
use crate::manifest::{header, OutputDir};

/// KS bound the Gaussian control must meet at `n = 10⁵`.
pub const CONTROL_KS_BOUND: f64 = 0.01;

/// `n` draws of `‖v‖²` with `v ~ N(0, I_k)`.
pub fn gaussian_norm_sq(k: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed);
    (0..n)
        .map(|_| standard_normals(&mut r, k).iter().map(|x| x * x).sum())
        .collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

fn density(x: &[f64], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &v in x {
        let b = ((v - lo) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            counts[b as usize] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / (x.len() as f64 * width))
        .collect()
}

/// Compares squared latent norms with `χ²(k)`, next to a true-Gaussian
/// control.
pub fn cmd_validate_latents(cfg: &RunConfig, inv: &Invocation) -> Result<Outcome> {
    let model = load_model(cfg)?;
    let k = cfg.generator.latent_dim;
    let (n, bins) = (cfg.validate.n_samples, cfg.validate.bins);
    let gen_seed = derive_seed(cfg.validate.seed, 0);
    let control_seed = derive_seed(cfg.validate.seed, 1);

    let mut generated = sample_latent_norm_sq(&model.weights, &model.transform, n, gen_seed);
    let mut control = gaussian_norm_sq(k, n, control_seed);
    let chi2 = |x: f64| chi2_cdf(k as u32, x);
    let ks_generator = ks_distance(&NormEcdf::build(&generated)?, chi2);
    let ks_control = ks_distance(&NormEcdf::build(&control)?, chi2);
    let (gen_mean, gen_var) = mean_var(&generated);
    let (ctl_mean, ctl_var) = mean_var(&control);
    generated.sort_by(f64::total_cmp);
    control.sort_by(f64::total_cmp);

    // Cover the χ² bulk and most of the generator's tail.
    let kf = k as f64;
    let hi = (kf + 8.0 * (2.0 * kf).sqrt()).max(sorted_quantile(&generated, 0.999));
    let width = hi / bins as f64;
    let gen_density = density(&generated, 0.0, width, bins);
    let ctl_density = density(&control, 0.0, width, bins);

    let mut hist = String::from("bin_lo,bin_hi,generator_density,control_density\n");
    let mut reference = String::from("x,chi2_pdf,chi2_cdf\n");
    for b in 0..bins {
        let (lo, up) = (b as f64 * width, (b + 1) as f64 * width);
        writeln!(hist, "{lo},{up},{},{}", gen_density[b], ctl_density[b])?;
        let x = 0.5 * (lo + up);
        writeln!(reference, "{x},{},{}", chi2_pdf(k as u32, x), chi2(x))?;
    }

    let report = json!({
        "latent_dim": k,
        "n_samples": n,
        "ks_generator": ks_generator,
        "ks_control": ks_control,
        "control_bound": CONTROL_KS_BOUND,
        "control_within_bound": ks_control < CONTROL_KS_BOUND,
        "generator": {"mean": gen_mean, "variance": gen_var,
                      "q001": sorted_quantile(&generated, 0.001), "q999": sorted_quantile(&generated, 0.999)},
        "control": {"mean": ctl_mean, "variance": ctl_var},
        "chi2": {"mean": kf, "variance": 2.0 * kf, "mode": (kf - 2.0).max(0.0)},
    });

    let mut out = OutputDir::create(inv.out_dir(cfg, "validate-latents"))?;
    out.write("histogram.csv", hist.as_bytes())?;
    out.write("chi2_reference.csv", reference.as_bytes())?;
    out.write_json("report.json", &report)?;
    let mut manifest = header("validate-latents", cfg)?;
    manifest.insert("weights_sha256".into(), json!(model.weights_sha256));
    manifest.insert(
        "seeds".into(),
        json!({"generator": gen_seed, "control": control_seed}),
    );
    manifest.insert("ks_generator".into(), json!(ks_generator));
    manifest.insert("ks_control".into(), json!(ks_control));
    out.finish(manifest)?;
    eprintln!("validate-latents: KS generator {ks_generator:.4}, control {ks_control:.4}");
    Ok(Outcome::Success)
}
