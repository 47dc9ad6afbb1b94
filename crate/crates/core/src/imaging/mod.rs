//! Measurement models, noise simulators and data-fidelity terms.

pub mod fanbeam;
pub mod fourier;
pub mod phantom;
pub mod sparse;
pub mod transmission;

use std::sync::Arc;

pub use fanbeam::{angle_range, build_fanbeam, trace_ray, FanBeamGeometry};
pub use fourier::{
    add_complex_gaussian, gaussian_fidelity, make_cartesian_mask, CartesianMask, FourierOperator,
    KSpaceData,
};
pub use phantom::{phantom_generate, Ellipse, EllipsePhantom, PhantomKind};
pub use sparse::SparseMatrix;
pub use transmission::{
    add_poisson, kl_fidelity, poisson_draw, xray_intensity, IntensityData, DEFAULT_MU_MAX,
};

use crate::error::Result;

/// A real-linear map between flat `f64` vectors.
///
/// Complex ranges are represented as interleaved `(re, im)` pairs so that
/// the adjoint is taken under the real inner product.
pub trait LinearOperator: Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    /// Panics if `x.len() != domain_len()`.
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// Panics if `y.len() != range_len()`.
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Noisy data paired with the forward model that produced it.
#[derive(Debug, Clone)]
pub enum Measurement {
    Fourier {
        op: FourierOperator,
        data: KSpaceData,
    },
    Transmission {
        h: Arc<SparseMatrix>,
        data: IntensityData,
    },
}

impl Measurement {
    /// Data fidelity `J(g, f)` and its gradient with respect to `f`.
    pub fn fidelity(&self, image: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Measurement::Fourier { op, data } => gaussian_fidelity(data, image, op),
            Measurement::Transmission { h, data } => kl_fidelity(data, image, h),
        }
    }

    /// `M`: complex samples for Fourier data, rays for transmission data.
    pub fn sample_count(&self) -> usize {
        match self {
            Measurement::Fourier { data, .. } => data.samples.len(),
            Measurement::Transmission { data, .. } => data.counts.len(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        match self {
            Measurement::Fourier { op, .. } => op.mask().pixel_count(),
            Measurement::Transmission { h, .. } => h.cols(),
        }
    }

    /// The forward operator as a real-linear map.
    pub fn operator(&self) -> &dyn LinearOperator {
        match self {
            Measurement::Fourier { op, .. } => op,
            Measurement::Transmission { h, .. } => h.as_ref(),
        }
    }
}
