use serde::{Deserialize, Serialize};

use super::NormEcdf;
use crate::error::{Error, Result};

/// The norm shell `{v : δ_min ≤ ‖v‖₂ ≤ δ_max}` holding a fraction `1 − γ` of
/// the latent-norm mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusSpec {
    pub delta_min: f64,
    pub delta_max: f64,
    pub gamma: f64,
}

impl AnnulusSpec {
    pub fn new(delta_min: f64, delta_max: f64, gamma: f64) -> Result<Self> {
        if !(delta_min >= 0.0 && delta_min <= delta_max && delta_max > 0.0) {
            return Err(Error::invalid(format!(
                "annulus radii must satisfy 0 ≤ δ_min ≤ δ_max, δ_max > 0 (got {delta_min}, {delta_max})"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        Ok(Self {
            delta_min,
            delta_max,
            gamma,
        })
    }

    pub fn contains(&self, norm: f64) -> bool {
        norm >= self.delta_min && norm <= self.delta_max
    }
}

/// Chooses `δ_min`, `δ_max` as the `γ/2` and `1 − γ/2` quantiles of the
/// empirical norm distribution.
pub fn calibrate_annulus(ecdf: &NormEcdf, gamma: f64) -> Result<AnnulusSpec> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let delta_min = ecdf.quantile(0.5 * gamma);
    let delta_max = ecdf.quantile(1.0 - 0.5 * gamma).max(delta_min);
    if delta_max <= 0.0 {
        return Err(Error::invalid("calibration samples are all zero"));
    }
    AnnulusSpec::new(delta_min, delta_max, gamma)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projects `v` onto the annulus.
pub fn project_annulus(v: &[f64], spec: &AnnulusSpec) -> Vec<f64> {
    let mut out = v.to_vec();
    project_annulus_in_place(&mut out, spec);
    out
}

/// In-place [`project_annulus`]. The zero vector maps to `δ_min·e₁`.
///
/// Rescaled outputs are nudged by single ulps until their recomputed norm
/// lies inside the closed shell, so the map is exactly idempotent.
pub fn project_annulus_in_place(v: &mut [f64], spec: &AnnulusSpec) {
    let n = norm(v);
    if spec.contains(n) {
        return;
    }
    if n == 0.0 {
        v.fill(0.0);
        if let Some(first) = v.first_mut() {
            *first = spec.delta_min;
        }
        return;
    }
    let target = if n < spec.delta_min {
        spec.delta_min
    } else {
        spec.delta_max
    };
    let scale = target / n;
    v.iter_mut().for_each(|x| *x *= scale);
    for _ in 0..8 {
        let m = norm(v);
        let fix = if m > spec.delta_max {
            1.0 - f64::EPSILON
        } else if m < spec.delta_min {
            1.0 + f64::EPSILON
        } else {
            break;
        };
        v.iter_mut().for_each(|x| *x *= fix);
    }
}

/// Rescales `v` onto the sphere of the given radius.
pub fn project_sphere(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    project_sphere_in_place(&mut out, radius)?;
    Ok(out)
}

pub fn project_sphere_in_place(v: &mut [f64], radius: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid(
            "cannot project a zero or non-finite vector onto a sphere",
        ));
    }
    let scale = radius / n;
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn spec() -> AnnulusSpec {
        AnnulusSpec::new(6.0, 10.0, 0.01).unwrap()
    }

    #[test]
    fn interior_points_are_fixed() {
        let v = [8.0, 0.0, 0.0];
        assert_eq!(project_annulus(&v, &spec()), v.to_vec());
    }

    #[test]
    fn outer_and_inner_branches_rescale() {
        let p = project_annulus(&[20.0, 0.0], &spec());
        assert!((p[0] - 10.0).abs() < 1e-14 && p[1] == 0.0);
        let p = project_annulus(&[0.0, 1.0], &spec());
        assert!((p[1] - 6.0).abs() < 1e-14 && p[0] == 0.0);
    }

    #[test]
    fn zero_maps_to_inner_radius_on_first_axis() {
        assert_eq!(
            project_annulus(&[0.0; 4], &spec()),
            vec![6.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn degenerate_calibration_collapses_annulus() {
        let e = NormEcdf::build(&[3.5; 10]).unwrap();
        let a = calibrate_annulus(&e, 0.1).unwrap();
        assert_eq!((a.delta_min, a.delta_max), (3.5, 3.5));
        assert!(calibrate_annulus(&e, 1.0).is_err());
        assert!(calibrate_annulus(&e, 0.0).is_err());
    }

    #[test]
    fn gaussian_calibration_inside_fraction() {
        // 10⁵ norms of N(0, I₆₄) for calibration, a fresh 10⁵ for checking.
        let draw = |seed: u64, n: usize| -> Vec<f64> {
            let mut r = rng::stream(seed);
            (0..n)
                .map(|_| norm(&rng::standard_normals(&mut r, 64)))
                .collect()
        };
        let e = NormEcdf::build(&draw(1, 100_000)).unwrap();
        let a = calibrate_annulus(&e, 0.01).unwrap();
        let fresh = draw(2, 100_000);
        let inside = fresh.iter().filter(|&&n| a.contains(n)).count() as f64 / fresh.len() as f64;
        assert!((inside - 0.99).abs() < 0.003, "inside fraction {inside}");
    }

    #[test]
    fn sphere_projection() {
        assert_eq!(project_sphere(&[0.0, 3.0], 1.0).unwrap(), vec![0.0, 1.0]);
        assert!(project_sphere(&[0.0, 0.0], 1.0).is_err());
        let v = [0.6, 0.8];
        assert_eq!(project_sphere(&v, 1.0).unwrap(), v.to_vec());

        let mut r = rng::stream(5);
        let v = rng::standard_normals(&mut r, 512);
        let p = project_sphere(&v, 512f64.sqrt()).unwrap();
        assert!((norm(&p) - 512f64.sqrt()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn annulus_projection_is_idempotent_and_in_range(
            v in prop::collection::vec(-30.0f64..30.0, 1..16),
            lo in 0.0f64..5.0,
            width in 0.0f64..5.0,
        ) {
            let a = AnnulusSpec::new(lo, lo + width + 1e-3, 0.01).unwrap();
            let p = project_annulus(&v, &a);
            let n = norm(&p);
            prop_assert!(n >= a.delta_min && n <= a.delta_max);
            prop_assert_eq!(project_annulus(&p, &a), p);
        }

        #[test]
        fn annulus_projection_is_nearest_point(
            v in prop::collection::vec(-30.0f64..30.0, 2..8),
            seed in 0u64..1000,
        ) {
            let a = spec();
            let p = project_annulus(&v, &a);
            let d = |x: &[f64]| v.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let best = d(&p);
            let mut r = rng::stream(seed);
            for _ in 0..50 {
                // A random feasible point near the projection.
                let mut q: Vec<f64> = p.iter().zip(rng::standard_normals(&mut r, v.len()))
                    .map(|(x, e)| x + 0.5 * e).collect();
                project_annulus_in_place(&mut q, &a);
                prop_assert!(d(&q) >= best - 1e-9);
            }
        }
    }
}
