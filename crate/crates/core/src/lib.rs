//! Empirical sampling of alternate, data-consistent solutions to tomographic
//! inverse problems by optimizing in the latent space of a style-based
//! generator.
//!
//! The crate is organized bottom-up:
//!
//! * [`latent`]: latent-vector geometry (norm statistics, annulus calibration,
//!   projections, CROSS/GEOCROSS penalties, the noise log-prior).
//! * [`generator`]: a small differentiable style-based generator with exact
//!   reverse-mode gradients with respect to its latent inputs.
//! * [`imaging`]: masked-Fourier and fan-beam X-ray measurement models, noise
//!   simulators and data-fidelity terms.
//! * [`sampler`]: restart-based projected Adam over the latent space, with the
//!   PULSE / PULSE₁ / PULSE₂ / PULSE++ variants and acceptance testing.
//! * [`analysis`]: uncertainty maps and measurable/null-space decomposition.

pub mod analysis;
pub mod error;
pub mod generator;
pub mod imaging;
pub mod latent;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
