use super::{LatentNoiseSet, LatentStyleMatrix};
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `CROSS(V) = Σ_{i<j} ‖v_i − v_j‖²` and its gradient.
pub fn cross_penalty(styles: &LatentStyleMatrix) -> (f64, LatentStyleMatrix) {
    let layers = styles.layers();
    let mut value = 0.0;
    for i in 0..layers {
        for j in i + 1..layers {
            value += styles
                .column(i)
                .iter()
                .zip(styles.column(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }

    // ∂/∂v_i = 2 Σ_{j≠i} (v_i − v_j) = 2 (L·v_i − Σ_j v_j)
    let mut sum = vec![0.0; styles.dim()];
    for col in styles.columns() {
        sum.iter_mut().zip(col).for_each(|(s, x)| *s += x);
    }
    let mut grad = LatentStyleMatrix::zeros(styles.dim(), layers);
    for (g, v) in grad.columns_mut().zip(styles.columns()) {
        for ((g, x), s) in g.iter_mut().zip(v).zip(&sum) {
            *g = 2.0 * (layers as f64 * x - s);
        }
    }
    (value, grad)
}

/// Sum of pairwise great-circle arc lengths `radius·θ_ij` between the style
/// columns, with its gradient.
///
/// The arc-cosine argument is clamped to `[-1, 1]`; exactly parallel pairs
/// contribute a zero (sub)gradient.
pub fn geocross_penalty(
    styles: &LatentStyleMatrix,
    radius: f64,
) -> Result<(f64, LatentStyleMatrix)> {
    let norms: Vec<f64> = styles.columns().map(|c| dot(c, c).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::invalid(format!(
            "GEOCROSS undefined for zero style column {i}"
        )));
    }
    let layers = styles.layers();
    let mut value = 0.0;
    let mut grad = LatentStyleMatrix::zeros(styles.dim(), layers);
    for i in 0..layers {
        for j in i + 1..layers {
            let (a, b) = (styles.column(i), styles.column(j));
            let (na, nb) = (norms[i], norms[j]);
            let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
            value += radius * c.acos();

            let s2 = 1.0 - c * c;
            if s2 <= 1e-24 {
                continue;
            }
            let dtheta_dc = -radius / s2.sqrt();
            let inv = 1.0 / (na * nb);
            for t in 0..styles.dim() {
                let da = b[t] * inv - c * a[t] / (na * na);
                let db = a[t] * inv - c * b[t] / (nb * nb);
                grad.column_mut(i)[t] += dtheta_dc * da;
                grad.column_mut(j)[t] += dtheta_dc * db;
            }
        }
    }
    Ok((value, grad))
}

/// Negative log-density (up to a constant) of standard-normal noise vectors:
/// `½ Σ_l ‖φ_l‖²`. The gradient is `Φ` itself.
pub fn noise_log_prior(noise: &LatentNoiseSet) -> (f64, LatentNoiseSet) {
    let value = 0.5 * noise.iter().map(|v| dot(v, v)).sum::<f64>();
    (value, noise.clone())
}
