use super::GeneratorWeights;

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn affine(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weight
        .chunks_exact(x.len())
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// `w = G_m(z)`: fully connected layers with leaky-ReLU activations between
/// them; the last layer is linear.
pub fn mapping_forward(weights: &GeneratorWeights, z: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), weights.config.latent_dim, "latent length");
    let slope = weights.config.leaky_slope;
    let depth = weights.mapping.len();
    let mut h = z.to_vec();
    for (i, layer) in weights.mapping.iter().enumerate() {
        h = affine(&layer.weight, &layer.bias, &h);
        if i + 1 < depth {
            h.iter_mut().for_each(|x| *x = leaky(*x, slope));
        }
    }
    h
}

/// Forward-mode derivative of [`mapping_forward`]: returns `(G_m(z), J·dz)`.
pub fn mapping_jvp(weights: &GeneratorWeights, z: &[f64], dz: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(z.len(), dz.len(), "tangent length");
    let slope = weights.config.leaky_slope;
    let depth = weights.mapping.len();
    let zero = vec![0.0; z.len()];
    let mut h = z.to_vec();
    let mut dh = dz.to_vec();
    for (i, layer) in weights.mapping.iter().enumerate() {
        h = affine(&layer.weight, &layer.bias, &h);
        dh = affine(&layer.weight, &zero, &dh);
        if i + 1 < depth {
            for (x, dx) in h.iter_mut().zip(dh.iter_mut()) {
                if *x < 0.0 {
                    *x *= slope;
                    *dx *= slope;
                }
            }
        }
    }
    (h, dh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{init_generator, GeneratorConfig};
    use crate::rng;

    #[test]
    fn mapping_is_deterministic_and_injective_in_practice() {
        let w = init_generator(&GeneratorConfig::default(), 1).unwrap();
        let mut r = rng::stream(2);
        let z = rng::standard_normals(&mut r, 64);
        let mut z2 = z.clone();
        z2[3] += 0.5;
        assert_eq!(mapping_forward(&w, &z), mapping_forward(&w, &z));
        assert_ne!(mapping_forward(&w, &z), mapping_forward(&w, &z2));
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let w = init_generator(&GeneratorConfig::default(), 1).unwrap();
        let mut r = rng::stream(3);
        for _ in 0..5 {
            let z = rng::standard_normals(&mut r, 64);
            let dz = rng::standard_normals(&mut r, 64);
            let (y, jv) = mapping_jvp(&w, &z, &dz);
            assert_eq!(y, mapping_forward(&w, &z));
            let h = 1e-6;
            let zp: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + h * b).collect();
            let zm: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a - h * b).collect();
            let (fp, fm) = (mapping_forward(&w, &zp), mapping_forward(&w, &zm));
            let fd: Vec<f64> = fp
                .iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            let err = fd
                .iter()
                .zip(&jv)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = jv.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err / scale < 1e-4, "relative error {}", err / scale);
        }
    }
}
