use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Empirical CDF of a set of latent norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormEcdf {
    sorted: Vec<f64>,
}

impl NormEcdf {
    pub fn build(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("ECDF needs at least one sample"));
        }
        if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("ECDF sample {bad}")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Right-continuous `#{samples ≤ x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&s| s <= x);
        count as f64 / self.sorted.len() as f64
    }

    /// Quantile by linear interpolation between order statistics at position
    /// `(n - 1)·q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let n = self.sorted.len();
        if n == 1 {
            return self.sorted[0];
        }
        let h = (n - 1) as f64 * q;
        let lo = h.floor() as usize;
        if lo + 1 >= n {
            return self.sorted[n - 1];
        }
        let frac = h - lo as f64;
        self.sorted[lo] + frac * (self.sorted[lo + 1] - self.sorted[lo])
    }
}

/// Density of the chi-squared distribution with `k` degrees of freedom.
pub fn chi2_pdf(k: u32, x: f64) -> f64 {
    assert!(k >= 1, "chi-squared needs k >= 1");
    if x < 0.0 {
        return 0.0;
    }
    let half_k = 0.5 * k as f64;
    if x == 0.0 {
        return match k {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        };
    }
    ((half_k - 1.0) * x.ln() - 0.5 * x - half_k * std::f64::consts::LN_2 - ln_gamma(half_k)).exp()
}

/// Cumulative distribution of the chi-squared distribution with `k` degrees
/// of freedom.
pub fn chi2_cdf(k: u32, x: f64) -> f64 {
    assert!(k >= 1, "chi-squared needs k >= 1");
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * k as f64, 0.5 * x)
    }
}

/// Kolmogorov–Smirnov distance between an ECDF and a reference CDF, taking
/// the supremum over both one-sided limits at each sample point.
pub fn ks_distance(ecdf: &NormEcdf, reference_cdf: impl Fn(f64) -> f64) -> f64 {
    let n = ecdf.len() as f64;
    ecdf.sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = reference_cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn eval_counts_samples_at_or_below() {
        let e = NormEcdf::build(&[3.0, 1.0, 2.0]).unwrap();
        assert!((e.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(3.0), 1.0);
    }

    #[test]
    fn build_rejects_empty_and_non_finite() {
        assert!(NormEcdf::build(&[]).is_err());
        assert!(NormEcdf::build(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn quantile_interpolates_order_statistics() {
        let e = NormEcdf::build(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.quantile(0.0), 1.0);
        assert_eq!(e.quantile(1.0), 4.0);
        assert!((e.quantile(0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_lower_quartile_matches_sort_oracle() {
        let mut r = rng::stream(11);
        let samples: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let e = NormEcdf::build(&samples).unwrap();

        // Oracle: the 2500-th order statistic of an independently sorted copy.
        let mut copy = samples.clone();
        copy.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = copy[2500];

        let q = e.quantile(0.25);
        assert!((q - 0.25).abs() < 0.02, "quantile {q}");
        assert!((q - oracle).abs() < 1e-3);
    }

    #[test]
    fn chi2_pdf_support_and_mode() {
        assert_eq!(chi2_pdf(5, -1.0), 0.0);
        let step = 0.01;
        let argmax = (1..100_000)
            .map(|i| i as f64 * step)
            .max_by(|a, b| chi2_pdf(512, *a).total_cmp(&chi2_pdf(512, *b)))
            .unwrap();
        assert!((argmax - 510.0).abs() <= step, "argmax {argmax}");
    }

    #[test]
    fn chi2_pdf_integrates_to_one() {
        // Composite Simpson after substituting x = t², which removes the
        // √x singularity of odd k at the origin; the tail beyond t = 20 is
        // negligible for k ≤ 64.
        for k in [3u32, 8, 64] {
            let g = |t: f64| 2.0 * t * chi2_pdf(k, t * t);
            let (a, b, n) = (0.0, 20.0, 40_000usize);
            let h = (b - a) / n as f64;
            let mut s = g(a) + g(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * g(a + i as f64 * h);
            }
            let integral = s * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "k={k}: {integral}");
        }
    }

    #[test]
    fn chi2_cdf_matches_integrated_pdf() {
        let k = 10;
        let x = 12.0;
        let n = 20_000;
        let h = x / n as f64;
        let mut s = chi2_pdf(k, 0.0) + chi2_pdf(k, x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * chi2_pdf(k, i as f64 * h);
        }
        assert!((s * h / 3.0 - chi2_cdf(k, x)).abs() < 1e-9);
    }

    #[test]
    fn ks_self_comparison_and_extremes() {
        // Samples at the reference's own mid-quantiles of a unit exponential.
        let n = 500;
        let cdf = |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() };
        let samples: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let e = NormEcdf::build(&samples).unwrap();
        assert!(ks_distance(&e, cdf) <= 1.0 / n as f64);
        assert_eq!(ks_distance(&e, |_| 0.0), 1.0);
    }
}
