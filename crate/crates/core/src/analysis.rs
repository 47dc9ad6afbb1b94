//! Uncertainty maps over a set of alternate solutions, their split into
//! measurable and null-space parts, and fidelity summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::imaging::LinearOperator;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 2000;

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Per-pixel population standard deviation (denominator `T`).
pub fn pixelwise_std<S: AsRef<[f64]>>(solutions: &[S]) -> Result<Vec<f64>> {
    if solutions.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 solutions for a standard deviation, got {}",
            solutions.len()
        )));
    }
    let n = solutions[0].as_ref().len();
    for s in solutions {
        check_len("solution pixels", n, s.as_ref().len())?;
    }
    // Two passes over deviations from the first solution, so identical
    // inputs give exactly zero.
    let t = solutions.len() as f64;
    let origin = solutions[0].as_ref();
    let mut mean = vec![0.0; n];
    for s in &solutions[1..] {
        for ((m, x), o) in mean.iter_mut().zip(s.as_ref()).zip(origin) {
            *m += x - o;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; n];
    for s in solutions {
        for (((v, x), o), m) in var.iter_mut().zip(s.as_ref()).zip(origin).zip(&mean) {
            let d = (x - o) - m;
            *v += d * d;
        }
    }
    Ok(var.into_iter().map(|v| (v / t).sqrt()).collect())
}

/// `f = f_meas + f_null` with `f_meas = H⁺Hf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSplit {
    pub measurable: Vec<f64>,
    pub null: Vec<f64>,
    pub iterations: usize,
    /// Final `‖Hᵀ(Hf − H f_meas)‖ / ‖Hᵀ H f‖`.
    pub normal_residual: f64,
    /// `‖H f_null‖ / ‖H f‖` (zero when `Hf = 0`).
    pub data_residual: f64,
}

/// Applies `H⁺H` to `f` by CGLS on `min ‖Hx − Hf‖` from `x = 0`, which
/// converges to the minimum-norm solution.
///
/// Iterates until both the normal-equation residual and the data residual
/// `‖Hf − Hx‖ / ‖Hf‖` are at most `tol`; on ill-conditioned operators the
/// first alone does not bound the second.
pub fn measurable_component(
    op: &dyn LinearOperator,
    f: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ComponentSplit> {
    check_len("measurable_component image", op.domain_len(), f.len())?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let b = op.apply(f);
    let b_norm = norm_sq(&b).sqrt();
    let mut x = vec![0.0; f.len()];
    let mut r = b.clone();
    let mut s = op.apply_adjoint(&r);
    let s0 = norm_sq(&s).sqrt();
    let mut p = s.clone();
    let mut gamma = norm_sq(&s);
    let mut iterations = 0;
    let (mut rel, mut rel_data) = if s0 > 0.0 { (1.0, 1.0) } else { (0.0, 0.0) };
    while rel > tol || rel_data > tol {
        if iterations == max_iter {
            return Err(Error::NotConverged {
                iterations,
                residual: rel.max(rel_data),
            });
        }
        let q = op.apply(&p);
        let alpha = gamma / norm_sq(&q);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
        s = op.apply_adjoint(&r);
        let gamma_next = norm_sq(&s);
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p.iter_mut()
            .zip(&s)
            .for_each(|(pi, si)| *pi = si + beta * *pi);
        iterations += 1;
        rel = gamma.sqrt() / s0;
        rel_data = norm_sq(&r).sqrt() / b_norm;
    }
    let null: Vec<f64> = f.iter().zip(&x).map(|(a, b)| a - b).collect();
    let data_residual = if b_norm > 0.0 {
        norm_sq(&op.apply(&null)).sqrt() / b_norm
    } else {
        0.0
    };
    Ok(ComponentSplit {
        measurable: x,
        null,
        iterations,
        normal_residual: rel,
        data_residual,
    })
}

/// Pixelwise standard-deviation maps of the solutions and of their
/// measurable and null components, with their squared norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub solution_count: usize,
    pub std_full: Vec<f64>,
    pub std_measurable: Vec<f64>,
    pub std_null: Vec<f64>,
    pub fom_full: f64,
    pub fom_measurable: f64,
    pub fom_null: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Largest `‖H f_null‖ / ‖H f‖` over the solutions.
    pub max_data_residual: f64,
    pub max_iterations: usize,
}

impl UncertaintyReport {
    /// `|FOM_meas + FOM_null − FOM_full| / FOM_full`, or 0 when all vanish.
    pub fn additivity_gap(&self) -> f64 {
        let sum = self.fom_measurable + self.fom_null;
        if self.fom_full == 0.0 {
            sum
        } else {
            (sum - self.fom_full).abs() / self.fom_full
        }
    }
}

/// Splits every solution (in parallel, reduced in input order) and summarizes
/// the variability of each part.
pub fn uncertainty_report<S: AsRef<[f64]> + Sync>(
    solutions: &[S],
    op: &dyn LinearOperator,
    tol: f64,
    max_iter: usize,
) -> Result<UncertaintyReport> {
    let std_full = pixelwise_std(solutions)?;
    let splits = solutions
        .par_iter()
        .map(|s| measurable_component(op, s.as_ref(), tol, max_iter))
        .collect::<Result<Vec<_>>>()?;
    let meas: Vec<&[f64]> = splits.iter().map(|s| s.measurable.as_slice()).collect();
    let null: Vec<&[f64]> = splits.iter().map(|s| s.null.as_slice()).collect();
    let std_measurable = pixelwise_std(&meas)?;
    let std_null = pixelwise_std(&null)?;
    Ok(UncertaintyReport {
        solution_count: solutions.len(),
        fom_full: norm_sq(&std_full),
        fom_measurable: norm_sq(&std_measurable),
        fom_null: norm_sq(&std_null),
        std_full,
        std_measurable,
        std_null,
        tol,
        max_iter,
        max_data_residual: splits.iter().map(|s| s.data_residual).fold(0.0, f64::max),
        max_iterations: splits.iter().map(|s| s.iterations).max().unwrap_or(0),
    })
}

/// Order statistics of the data-fidelity values and the accepted fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub epsilon: f64,
    pub fraction_within: f64,
}

/// Quantile of sorted data by linear interpolation at `(n − 1)·q`.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fidelity_summary(fidelities: &[f64], epsilon: f64) -> Result<FidelitySummary> {
    if fidelities.is_empty() {
        return Err(Error::invalid("fidelity summary of an empty list"));
    }
    if fidelities.iter().any(|j| j.is_nan()) {
        return Err(Error::NonFinite("fidelity values".into()));
    }
    let mut sorted = fidelities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let within = sorted.iter().filter(|&&j| j <= epsilon).count();
    Ok(FidelitySummary {
        count: sorted.len(),
        min: sorted[0],
        q1: sorted_quantile(&sorted, 0.25),
        median: sorted_quantile(&sorted, 0.5),
        q3: sorted_quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        epsilon,
        fraction_within: within as f64 / sorted.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{build_fanbeam, make_cartesian_mask, FanBeamGeometry, FourierOperator};
    use crate::rng;
    use proptest::prelude::*;

    fn random(seed: u64, n: usize) -> Vec<f64> {
        rng::standard_normals(&mut rng::stream(seed), n)
    }

    #[test]
    fn std_small_cases() {
        let a = vec![0.3, 0.4, 0.5];
        assert_eq!(
            pixelwise_std(&[a.clone(), a.clone(), a.clone()]).unwrap(),
            vec![0.0; 3]
        );
        let mut b = a.clone();
        b[1] += 2.0;
        let s = pixelwise_std(&[a.clone(), b]).unwrap();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 1.0).abs() < 1e-15);
        assert!(pixelwise_std(&[a.clone()]).is_err());
        assert!(pixelwise_std(&[a, vec![1.0]]).is_err());
    }

    #[test]
    fn std_matches_brute_force() {
        let stack: Vec<Vec<f64>> = (0..7).map(|i| random(i, 50)).collect();
        let got = pixelwise_std(&stack).unwrap();
        for p in 0..50 {
            let vals: Vec<f64> = stack.iter().map(|s| s[p]).collect();
            let mean = vals.iter().sum::<f64>() / 7.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
            assert!((got[p] - var.sqrt()).abs() < 1e-10);
        }
    }

    fn closed_form_projection(op: &FourierOperator, f: &[f64]) -> Vec<f64> {
        op.adjoint(&op.forward(f).unwrap()).unwrap()
    }

    #[test]
    fn fourier_split_matches_closed_form() {
        let mask = make_cartesian_mask(16, 16, 4.0, 0.1, 3).unwrap();
        let op = FourierOperator::new(mask).unwrap();
        let f = random(1, 256);
        let split = measurable_component(&op, &f, 1e-8, 2000).unwrap();
        let exact = closed_form_projection(&op, &f);
        let err = split
            .measurable
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        let zero = measurable_component(&op, &[0.0; 256], 1e-8, 10).unwrap();
        assert!(zero.measurable.iter().chain(&zero.null).all(|&v| v == 0.0));
        assert_eq!(zero.iterations, 0);
    }

    #[test]
    fn fanbeam_null_component_is_invisible() {
        let h = build_fanbeam(&FanBeamGeometry::scaled(16, 0.82, 20)).unwrap();
        let split = measurable_component(&h, &random(2, 256), 1e-8, 2000).unwrap();
        assert!(split.data_residual < 1e-6, "{}", split.data_residual);
        assert!(matches!(
            measurable_component(&h, &random(2, 256), 1e-14, 3),
            Err(Error::NotConverged { iterations: 3, .. })
        ));
    }

    #[test]
    fn sparse_view_split_is_orthogonal() {
        // 8 views give fewer rays than pixels, so the null space is large.
        let h = build_fanbeam(&FanBeamGeometry::scaled(32, 0.82, 8)).unwrap();
        assert!(h.rows() < h.cols());
        let f = random(3, h.cols());
        let split = measurable_component(&h, &f, 1e-8, 2000).unwrap();
        assert!(split.data_residual < 1e-6, "{}", split.data_residual);
        let ip: f64 = split
            .measurable
            .iter()
            .zip(&split.null)
            .map(|(a, b)| a * b)
            .sum();
        let cos = ip.abs() / (norm_sq(&split.measurable) * norm_sq(&split.null)).sqrt();
        assert!(cos < 1e-4, "{cos}");
        let rebuilt: Vec<f64> = split
            .measurable
            .iter()
            .zip(&split.null)
            .map(|(a, b)| a + b)
            .collect();
        assert!(rebuilt.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn report_on_identical_and_null_only_stacks() {
        let mask = make_cartesian_mask(16, 16, 4.0, 0.1, 5).unwrap();
        let op = FourierOperator::new(mask).unwrap();
        let base = random(3, 256);
        let same = uncertainty_report(&[base.clone(), base.clone()], &op, 1e-8, 2000).unwrap();
        assert_eq!(
            (same.fom_full, same.fom_measurable, same.fom_null),
            (0.0, 0.0, 0.0)
        );

        let stack: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let d = random(10 + i, 256);
                let p = closed_form_projection(&op, &d);
                base.iter()
                    .zip(d.iter().zip(&p))
                    .map(|(b, (d, p))| b + d - p)
                    .collect()
            })
            .collect();
        let r = uncertainty_report(&stack, &op, 1e-8, 2000).unwrap();
        assert!(r.fom_measurable < 1e-10, "{}", r.fom_measurable);
        assert!(r.fom_null > 1.0);
        assert!(r.additivity_gap() < 0.01);
    }

    #[test]
    fn fidelity_summary_order_statistics() {
        let s = fidelity_summary(&[4.0, 1.0, 3.0, 2.0], 2.5).unwrap();
        assert_eq!(s.fraction_within, 0.5);
        assert_eq!(s.median, 2.5);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert_eq!(
            fidelity_summary(&[1.0, 2.0], 10.0).unwrap().fraction_within,
            1.0
        );
        assert!(fidelity_summary(&[], 1.0).is_err());

        let data = random(4, 101);
        let s = fidelity_summary(&data, 0.0).unwrap();
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        // n − 1 = 100 makes every quartile position an integer.
        assert_eq!(s.q1, sorted[25]);
        assert_eq!(s.median, sorted[50]);
        assert_eq!(s.q3, sorted[75]);
    }

    proptest! {
        #[test]
        fn std_is_permutation_invariant(seed in 0u64..1000, shift in 1usize..6) {
            let stack: Vec<Vec<f64>> = (0..6).map(|i| random(seed * 10 + i, 20)).collect();
            let mut rotated = stack.clone();
            rotated.rotate_left(shift);
            let a = pixelwise_std(&stack).unwrap();
            let b = pixelwise_std(&rotated).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x >= 0.0);
            }
        }
    }
}
