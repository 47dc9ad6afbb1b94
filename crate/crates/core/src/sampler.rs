//! Restart-based projected-Adam sampling in the generator latent space.
//!
//! Each restart draws a Gaussian initialization, projects it onto the
//! variant's feasible set, then alternates Adam steps with projections while
//! tracking the best iterate by objective value. A restart's solution is
//! accepted when its data fidelity is within the tolerance `ε_n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generator::{ForwardPass, GeneratorWeights, ObjectImage, TransformParams};
use crate::imaging::Measurement;
use crate::latent::{
    cross_penalty, geocross_penalty, noise_dim, noise_log_prior, project_annulus_in_place,
    project_sphere_in_place, AnnulusSpec, LatentNoiseSet, LatentStyleMatrix,
};
use crate::rng;

/// Which regularizer and feasible set the sampler uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Annulus on `V`, CROSS, Gaussian log-prior on `Φ`.
    PulsePp,
    /// Spheres on `V` and `Φ`, GEOCROSS.
    Pulse,
    /// Annulus on `V`, spheres on `Φ`, CROSS.
    Pulse1,
    /// Sphere on `V`, GEOCROSS, Gaussian log-prior on `Φ`.
    Pulse2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::PulsePp,
        Variant::Pulse,
        Variant::Pulse1,
        Variant::Pulse2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PulsePp => "pulse_pp",
            Variant::Pulse => "pulse",
            Variant::Pulse1 => "pulse1",
            Variant::Pulse2 => "pulse2",
        }
    }

    pub fn uses_annulus(self) -> bool {
        matches!(self, Variant::PulsePp | Variant::Pulse1)
    }

    pub fn noise_on_spheres(self) -> bool {
        matches!(self, Variant::Pulse | Variant::Pulse1)
    }

    pub fn noise_prior(self) -> bool {
        !self.noise_on_spheres()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMode {
    /// `ε_n = M/2`.
    GaussianMorozov,
    /// `ε_n = J(g, f̃)` with `f̃` the embedding of the true object.
    PoissonEmbedding,
}

fn default_gamma() -> f64 {
    1e-3
}
fn default_lambda_c() -> f64 {
    0.01
}
fn default_lambda_g() -> f64 {
    0.1
}
fn default_lr() -> f64 {
    0.4
}
fn default_n_steps() -> usize {
    2000
}
fn default_restarts() -> usize {
    32
}
fn default_variant() -> Variant {
    Variant::PulsePp
}
fn default_acceptance() -> AcceptanceMode {
    AcceptanceMode::GaussianMorozov
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda_c")]
    pub lambda_c: f64,
    #[serde(default = "default_lambda_g")]
    pub lambda_g: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    /// Number of restarts `T`.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_acceptance")]
    pub acceptance: AcceptanceMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            gamma: default_gamma(),
            lambda_c: default_lambda_c(),
            lambda_g: default_lambda_g(),
            lr: default_lr(),
            n_steps: default_n_steps(),
            restarts: default_restarts(),
            seed: 0,
            acceptance: default_acceptance(),
        }
    }
}

impl SamplerConfig {
    /// Checks value ranges; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::invalid(format!("{field}: {why}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return bad("lambda_c", "must be finite and ≥ 0");
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return bad("lambda_g", "must be finite and ≥ 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be finite and > 0");
        }
        if self.n_steps == 0 {
            return bad("n_steps", "must be ≥ 1");
        }
        if self.restarts == 0 {
            return bad("restarts", "must be ≥ 1");
        }
        Ok(())
    }

    /// Settings for object embedding: the same loop with `λ_c` halved.
    pub fn embedding(&self) -> Self {
        Self {
            variant: Variant::PulsePp,
            lambda_c: 0.5 * self.lambda_c,
            restarts: 1,
            ..self.clone()
        }
    }
}

/// The generator and latent geometry shared by every restart.
#[derive(Debug, Clone, Copy)]
pub struct LatentModel<'a> {
    pub weights: &'a GeneratorWeights,
    pub transform: &'a TransformParams,
    /// Required by the annulus variants.
    pub annulus: Option<&'a AnnulusSpec>,
}

impl LatentModel<'_> {
    fn dim(&self) -> usize {
        self.weights.config.latent_dim
    }

    fn layers(&self) -> usize {
        self.weights.config.layers
    }

    fn annulus_for(&self, variant: Variant) -> Result<Option<&AnnulusSpec>> {
        match (variant.uses_annulus(), self.annulus) {
            (true, None) => Err(Error::Unsupported(format!(
                "variant {} needs a calibrated annulus",
                variant.name()
            ))),
            (true, a) => Ok(a),
            (false, _) => Ok(None),
        }
    }
}

/// A data-fidelity term `J(f)` with its gradient in image space.
pub trait DataFidelity: Sync {
    fn pixel_count(&self) -> usize;
    fn evaluate(&self, image: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl DataFidelity for Measurement {
    fn pixel_count(&self) -> usize {
        Measurement::pixel_count(self)
    }

    fn evaluate(&self, image: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.fidelity(image)
    }
}

/// `½‖f − target‖²`, the embedding distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTarget {
    pub pixels: Vec<f64>,
}

impl DataFidelity for EmbeddingTarget {
    fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    fn evaluate(&self, image: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("embedding image", self.pixels.len(), image.len())?;
        let grad: Vec<f64> = image.iter().zip(&self.pixels).map(|(a, b)| a - b).collect();
        let value = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
        Ok((value, grad))
    }
}

/// Objective value, its fidelity part, and the gradient with respect to
/// `(V, Φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub fidelity: f64,
    pub grad_styles: LatentStyleMatrix,
    pub grad_noise: LatentNoiseSet,
}

/// `L = J(g, G̃(V, Φ)) + R(V, Φ)` with the variant's regularizer.
pub fn objective_eval(
    variant: Variant,
    config: &SamplerConfig,
    styles: &LatentStyleMatrix,
    noise: &LatentNoiseSet,
    data: &dyn DataFidelity,
    model: &LatentModel<'_>,
) -> Result<Objective> {
    check_len(
        "fidelity pixel count",
        model.weights.config.pixel_count(),
        data.pixel_count(),
    )?;
    let pass = ForwardPass::run(model.weights, model.transform, styles, noise)?;
    let (fidelity, upstream) = data.evaluate(pass.image())?;
    let (mut grad_styles, mut grad_noise) =
        pass.backward(model.weights, model.transform, &upstream)?;
    let mut value = fidelity;

    let (penalty, pgrad, lambda) = match variant {
        Variant::PulsePp | Variant::Pulse1 => {
            let (p, g) = cross_penalty(styles);
            (p, g, config.lambda_c)
        }
        Variant::Pulse | Variant::Pulse2 => {
            let (p, g) = geocross_penalty(styles, (model.dim() as f64).sqrt())?;
            (p, g, config.lambda_g)
        }
    };
    value += lambda * penalty;
    for (a, b) in grad_styles.as_mut_slice().iter_mut().zip(pgrad.as_slice()) {
        *a += lambda * b;
    }
    if variant.noise_prior() {
        let (p, g) = noise_log_prior(noise);
        value += p;
        for (a, b) in grad_noise.iter_mut().zip(g.iter()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok(Objective {
        value,
        fidelity,
        grad_styles,
        grad_noise,
    })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for one flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradients", self.m.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Projects `(V, Φ)` onto the variant's feasible set in place.
pub fn constraint_step(
    variant: Variant,
    styles: &mut LatentStyleMatrix,
    noise: &mut LatentNoiseSet,
    annulus: Option<&AnnulusSpec>,
) -> Result<()> {
    if variant.uses_annulus() {
        let spec = annulus.ok_or_else(|| {
            Error::Unsupported(format!("variant {} needs an annulus", variant.name()))
        })?;
        styles
            .columns_mut()
            .for_each(|c| project_annulus_in_place(c, spec));
    } else {
        let radius = (styles.dim() as f64).sqrt();
        for c in styles.columns_mut() {
            project_sphere_in_place(c, radius)?;
        }
    }
    if variant.noise_on_spheres() {
        for (l, phi) in noise.iter_mut().enumerate() {
            project_sphere_in_place(phi, (noise_dim(l + 1) as f64).sqrt())?;
        }
    }
    Ok(())
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub index: usize,
    pub seed: u64,
    pub styles: LatentStyleMatrix,
    pub noise: LatentNoiseSet,
    /// `G̃(V̂, Φ̂)`.
    pub image: Vec<f64>,
    /// Best objective `L̂`.
    pub objective: f64,
    /// Objective at the projected initialization.
    pub initial_objective: f64,
    /// `J(g, f̂)` re-evaluated on `image`.
    pub fidelity: f64,
    pub best_step: usize,
    pub accepted: bool,
    /// Best-so-far objective after each iteration, starting at the
    /// initialization.
    pub trace: Vec<f64>,
    /// Set when the restart was aborted.
    pub failure: Option<String>,
}

/// Draws the Gaussian initialization of a restart.
pub fn initial_state(model: &LatentModel<'_>, seed: u64) -> (LatentStyleMatrix, LatentNoiseSet) {
    let mut r = rng::stream(seed);
    let (k, layers) = (model.dim(), model.layers());
    let styles = LatentStyleMatrix::new(k, layers, rng::standard_normals(&mut r, k * layers))
        .expect("sizes agree by construction");
    let noise = LatentNoiseSet::new(
        (1..=layers)
            .map(|l| rng::standard_normals(&mut r, noise_dim(l)))
            .collect(),
    )
    .expect("sizes agree by construction");
    (styles, noise)
}

/// Runs `config.n_steps` projected-Adam iterations from a fresh seeded
/// initialization. `epsilon` sets the `accepted` flag.
///
/// A non-finite objective aborts the restart; it is then reported with
/// `failure` set and `accepted == false` rather than as an error.
pub fn run_restart(
    config: &SamplerConfig,
    data: &dyn DataFidelity,
    model: &LatentModel<'_>,
    epsilon: f64,
    index: usize,
    seed: u64,
) -> Result<RestartResult> {
    config.validate()?;
    let variant = config.variant;
    let annulus = model.annulus_for(variant)?;
    let (mut styles, mut noise) = initial_state(model, seed);

    let failed = |styles: LatentStyleMatrix,
                  noise: LatentNoiseSet,
                  trace: Vec<f64>,
                  why: String| RestartResult {
        index,
        seed,
        image: Vec::new(),
        styles,
        noise,
        objective: f64::NAN,
        initial_objective: trace.first().copied().unwrap_or(f64::NAN),
        fidelity: f64::INFINITY,
        best_step: 0,
        accepted: false,
        trace,
        failure: Some(why),
    };

    if let Err(e) = constraint_step(variant, &mut styles, &mut noise, annulus) {
        return Ok(failed(styles, noise, Vec::new(), e.to_string()));
    }
    let mut current = match objective_eval(variant, config, &styles, &noise, data, model) {
        Ok(o) => o,
        Err(Error::NonFinite(what)) => {
            return Ok(failed(
                styles,
                noise,
                Vec::new(),
                format!("non-finite {what}"),
            ))
        }
        Err(e) => return Err(e),
    };
    let initial_objective = current.value;
    let mut best = (styles.clone(), noise.clone(), current.value, 0usize);
    let mut trace = Vec::with_capacity(config.n_steps + 1);
    trace.push(current.value);

    let mut adam_v = AdamState::new(styles.as_slice().len());
    let mut adam_phi = AdamState::new(noise.total_len());
    for step in 1..=config.n_steps {
        adam_v.step(
            styles.as_mut_slice(),
            current.grad_styles.as_slice(),
            config.lr,
        )?;
        let mut phi = noise.flatten();
        adam_phi.step(&mut phi, &current.grad_noise.flatten(), config.lr)?;
        noise = LatentNoiseSet::from_flat(noise.layers(), &phi)?;
        let projected = constraint_step(variant, &mut styles, &mut noise, annulus);
        let next =
            projected.and_then(|_| objective_eval(variant, config, &styles, &noise, data, model));
        current = match next {
            Ok(o) => o,
            Err(e @ (Error::NonFinite(_) | Error::InvalidInput(_))) => {
                let (s, n, ..) = best;
                return Ok(failed(s, n, trace, format!("step {step}: {e}")));
            }
            Err(e) => return Err(e),
        };
        if current.value < best.2 {
            best = (styles.clone(), noise.clone(), current.value, step);
        }
        trace.push(best.2);
    }

    let (styles, noise, objective, best_step) = best;
    let pass = ForwardPass::run(model.weights, model.transform, &styles, &noise)?;
    let image = pass.image().to_vec();
    let (fidelity, _) = data.evaluate(&image)?;
    Ok(RestartResult {
        index,
        seed,
        styles,
        noise,
        image,
        objective,
        initial_objective,
        fidelity,
        best_step,
        accepted: fidelity <= epsilon,
        trace,
        failure: None,
    })
}

/// Result of an embedding: the latent state and `f̃ = G̃(Ṽ, Φ̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub styles: LatentStyleMatrix,
    pub noise: LatentNoiseSet,
    pub image: Vec<f64>,
    /// `½‖f − f̃‖²`.
    pub distance: f64,
    pub trace: Vec<f64>,
}

/// Approximates the closest generator output to `object` by minimizing
/// `½‖f − G̃(V, Φ)‖²` with the PULSE++ loop and halved `λ_c`.
pub fn embed_object(
    object: &ObjectImage,
    model: &LatentModel<'_>,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Embedding> {
    let target = EmbeddingTarget {
        pixels: object.pixels().to_vec(),
    };
    let cfg = config.embedding();
    let r = run_restart(&cfg, &target, model, f64::INFINITY, 0, seed)?;
    if let Some(why) = r.failure {
        return Err(Error::NonFinite(format!("embedding objective ({why})")));
    }
    Ok(Embedding {
        styles: r.styles,
        noise: r.noise,
        image: r.image,
        distance: r.fidelity,
        trace: r.trace,
    })
}

/// Seed of the embedding run, kept apart from the restart seeds.
pub fn embedding_seed(master: u64) -> u64 {
    rng::derive_seed(master, u64::MAX)
}

/// The acceptance tolerance `ε_n`.
///
/// Gaussian data use `M/2` from the realized sample count. Poisson data use
/// the fidelity of the embedded true object, which requires `truth`.
pub fn acceptance_threshold(
    config: &SamplerConfig,
    measurement: &Measurement,
    truth: Option<&ObjectImage>,
    model: &LatentModel<'_>,
) -> Result<f64> {
    match config.acceptance {
        AcceptanceMode::GaussianMorozov => Ok(0.5 * measurement.sample_count() as f64),
        AcceptanceMode::PoissonEmbedding => {
            let truth = truth.ok_or_else(|| {
                Error::invalid("poisson_embedding acceptance needs the true object")
            })?;
            let emb = embed_object(truth, model, config, embedding_seed(config.seed))?;
            Ok(measurement.fidelity(&emb.image)?.0)
        }
    }
}

/// All restarts of one sampling run, in restart order.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSet {
    pub epsilon: f64,
    pub restarts: Vec<RestartResult>,
}

impl SolutionSet {
    pub fn accepted(&self) -> impl Iterator<Item = &RestartResult> {
        self.restarts.iter().filter(|r| r.accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    pub fn acceptance_fraction(&self) -> f64 {
        self.accepted_count() as f64 / self.restarts.len() as f64
    }
}

/// Seed of restart `index` under `master`.
pub fn restart_seed(master: u64, index: usize) -> u64 {
    rng::derive_seed(master, index as u64)
}

/// Runs `config.restarts` independent restarts on up to `workers` threads
/// (`0` means all cores) and accepts those with `J ≤ epsilon`.
///
/// The result does not depend on `workers`.
pub fn empirical_sample(
    config: &SamplerConfig,
    data: &dyn DataFidelity,
    model: &LatentModel<'_>,
    epsilon: f64,
    workers: usize,
) -> Result<SolutionSet> {
    config.validate()?;
    model.annulus_for(config.variant)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let restarts = pool.install(|| {
        (0..config.restarts)
            .into_par_iter()
            .map(|i| {
                run_restart(
                    config,
                    data,
                    model,
                    epsilon,
                    i,
                    restart_seed(config.seed, i),
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SolutionSet { epsilon, restarts })
}
