//! Latent-vector geometry for the style matrix `V` and the noise set `Φ`.

mod ecdf;
mod penalty;
mod projection;

pub use ecdf::{chi2_cdf, chi2_pdf, ks_distance, NormEcdf};
pub use penalty::{cross_penalty, geocross_penalty, noise_log_prior};
pub use projection::{
    calibrate_annulus, project_annulus, project_annulus_in_place, project_sphere,
    project_sphere_in_place, AnnulusSpec,
};

use crate::error::{check_len, Error, Result};

/// Dimension of the `l`-th noise vector (1-based): `4^(1 + ⌈l/2⌉)`.
pub fn noise_dim(layer: usize) -> usize {
    assert!(layer >= 1, "layers are numbered from 1");
    4usize.pow(1 + layer.div_ceil(2) as u32)
}

/// `[p_1, …, p_L]`.
pub fn noise_dims(layers: usize) -> Vec<usize> {
    (1..=layers).map(noise_dim).collect()
}

/// The `k × L` style matrix, stored column-major so that each per-layer style
/// vector is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStyleMatrix {
    dim: usize,
    layers: usize,
    data: Vec<f64>,
}

impl LatentStyleMatrix {
    pub fn new(dim: usize, layers: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || layers == 0 {
            return Err(Error::invalid("style matrix needs k ≥ 1 and L ≥ 1"));
        }
        check_len("style matrix", dim * layers, data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("style matrix".into()));
        }
        Ok(Self { dim, layers, data })
    }

    pub fn zeros(dim: usize, layers: usize) -> Self {
        Self {
            dim,
            layers,
            data: vec![0.0; dim * layers],
        }
    }

    /// Builds a matrix from per-layer columns.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let dim = columns.first().map(|c| c.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * columns.len());
        for c in columns {
            check_len("style column", dim, c.as_ref().len())?;
            data.extend_from_slice(c.as_ref());
        }
        Self::new(dim, columns.len(), data)
    }

    /// Latent dimension `k`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Layer count `L`.
    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn columns_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// The per-layer latent noise vectors `φ_l ∈ ℝ^{p_l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoiseSet {
    vectors: Vec<Vec<f64>>,
}

impl LatentNoiseSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        for (i, v) in vectors.iter().enumerate() {
            check_len("noise vector", noise_dim(i + 1), v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("noise vector {}", i + 1)));
            }
        }
        Ok(Self { vectors })
    }

    pub fn zeros(layers: usize) -> Self {
        Self {
            vectors: noise_dims(layers)
                .into_iter()
                .map(|p| vec![0.0; p])
                .collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.vectors.len()
    }

    /// Total number of noise coordinates `Σ p_l`.
    pub fn total_len(&self) -> usize {
        self.vectors.iter().map(Vec::len).sum()
    }

    pub fn get(&self, layer: usize) -> &[f64] {
        &self.vectors[layer]
    }

    pub fn get_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.vectors[layer]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.iter().map(Vec::as_slice)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.vectors.iter_mut()
    }

    /// Concatenation of all noise vectors in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        self.vectors.concat()
    }

    pub fn from_flat(layers: usize, flat: &[f64]) -> Result<Self> {
        let dims = noise_dims(layers);
        check_len("flat noise set", dims.iter().sum(), flat.len())?;
        let mut offset = 0;
        let vectors = dims
            .into_iter()
            .map(|p| {
                let v = flat[offset..offset + p].to_vec();
                offset += p;
                v
            })
            .collect();
        Self::new(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_dims_follow_resolution_ladder() {
        assert_eq!(noise_dim(1), 16);
        assert_eq!(noise_dim(3), 64);
        assert_eq!(noise_dim(8), 1024);
        assert_eq!(noise_dims(8), vec![16, 16, 64, 64, 256, 256, 1024, 1024]);
    }

    #[test]
    fn style_matrix_rejects_bad_shapes() {
        assert!(LatentStyleMatrix::new(4, 2, vec![0.0; 7]).is_err());
        assert!(LatentStyleMatrix::new(2, 1, vec![0.0, f64::NAN]).is_err());
        let m = LatentStyleMatrix::from_columns(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.column(1), &[3.0, 4.0]);
    }

    #[test]
    fn noise_set_checks_layer_dims() {
        assert!(LatentNoiseSet::new(vec![vec![0.0; 16], vec![0.0; 15]]).is_err());
        let z = LatentNoiseSet::zeros(4);
        assert_eq!(z.total_len(), 16 + 16 + 64 + 64);
        let round = LatentNoiseSet::from_flat(4, &z.flatten()).unwrap();
        assert_eq!(round, z);
    }
}
