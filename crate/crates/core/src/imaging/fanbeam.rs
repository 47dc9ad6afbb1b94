//! Fan-beam X-ray projector built by exact ray–pixel intersection.
//!
//! The image occupies `[−n·p/2, n·p/2]²` (mm) centred on the isocenter; pixel
//! `(row, col)` covers `x ∈ [−n·p/2 + col·p, …)`, `y ∈ [−n·p/2 + row·p, …)`.
//! The source rotates on a circle of radius `source_to_iso_mm`; a flat
//! detector sits `iso_to_detector_mm` past the isocenter.

use serde::{Deserialize, Serialize};

use super::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanBeamGeometry {
    pub n_pix: usize,
    pub pixel_mm: f64,
    pub source_to_iso_mm: f64,
    pub iso_to_detector_mm: f64,
    pub n_detectors: usize,
    pub detector_pitch_mm: f64,
    pub angles_deg: Vec<f64>,
}

/// `n` equally spaced angles over `[first, last]` degrees, inclusive.
pub fn angle_range(first: f64, last: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![first],
        _ => (0..n)
            .map(|i| first + (last - first) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl FanBeamGeometry {
    /// A geometry scaled to the image: source at twice the image width, a
    /// detector wide enough to see the whole field of view, and `n_views`
    /// views over `[0°, 119°]`.
    pub fn scaled(n_pix: usize, pixel_mm: f64, n_views: usize) -> Self {
        let width = n_pix as f64 * pixel_mm;
        let source_to_iso_mm = 2.0 * width;
        let iso_to_detector_mm = width;
        let radius = width / std::f64::consts::SQRT_2;
        let span = source_to_iso_mm + iso_to_detector_mm;
        let half_fan = (radius / source_to_iso_mm).asin();
        let detector_pitch_mm = pixel_mm * span / source_to_iso_mm;
        let n_detectors = (2.0 * span * half_fan.tan() / detector_pitch_mm).ceil() as usize + 2;
        Self {
            n_pix,
            pixel_mm,
            source_to_iso_mm,
            iso_to_detector_mm,
            n_detectors,
            detector_pitch_mm,
            angles_deg: angle_range(0.0, 119.0, n_views),
        }
    }

    pub fn half_extent(&self) -> f64 {
        0.5 * self.n_pix as f64 * self.pixel_mm
    }

    pub fn ray_count(&self) -> usize {
        self.angles_deg.len() * self.n_detectors
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.pixel_mm,
            self.source_to_iso_mm,
            self.iso_to_detector_mm,
            self.detector_pitch_mm,
        ];
        if self.n_pix == 0
            || self.n_detectors == 0
            || positive.iter().any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::DegenerateGeometry(
                "sizes, pitches and distances must be positive".into(),
            ));
        }
        if self.angles_deg.is_empty()
            || self.angles_deg.iter().any(|a| !a.is_finite())
            || self.angles_deg.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::DegenerateGeometry(
                "view angles must be finite and strictly increasing".into(),
            ));
        }
        let radius = self.half_extent() * std::f64::consts::SQRT_2;
        if self.source_to_iso_mm <= radius {
            return Err(Error::DegenerateGeometry(format!(
                "source at {} mm lies inside the image support (radius {radius:.3} mm)",
                self.source_to_iso_mm
            )));
        }
        Ok(())
    }

    /// Source and detector-element positions of ray `(view, det)`.
    pub fn ray(&self, view: usize, det: usize) -> ([f64; 2], [f64; 2]) {
        let theta = self.angles_deg[view].to_radians();
        let (s, c) = theta.sin_cos();
        let source = [self.source_to_iso_mm * c, self.source_to_iso_mm * s];
        let offset = (det as f64 - 0.5 * (self.n_detectors as f64 - 1.0)) * self.detector_pitch_mm;
        let end = [
            -self.iso_to_detector_mm * c - offset * s,
            -self.iso_to_detector_mm * s + offset * c,
        ];
        (source, end)
    }
}

/// Parametric positions in `(lo, hi)` where the segment crosses the grid
/// planes `−half + i·pitch` along one axis, ascending.
fn plane_crossings(
    origin: f64,
    delta: f64,
    half: f64,
    n: usize,
    pitch: f64,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    if delta == 0.0 {
        return Vec::new();
    }
    let mut out: Vec<f64> = (0..=n)
        .map(|i| (-half + i as f64 * pitch - origin) / delta)
        .filter(|&a| a > lo && a < hi)
        .collect();
    if delta < 0.0 {
        out.reverse();
    }
    out
}

/// Intersection lengths (mm) of segment `p0 → p1` with the pixels of an
/// `n × n` grid of the given pitch, as `(pixel index, length)` pairs sorted by
/// pixel index.
pub fn trace_ray(p0: [f64; 2], p1: [f64; 2], n: usize, pitch: f64) -> Vec<(u32, f64)> {
    let half = 0.5 * n as f64 * pitch;
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let length = d[0].hypot(d[1]);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p0[axis] <= -half || p0[axis] >= half {
                return Vec::new();
            }
            continue;
        }
        let a = (-half - p0[axis]) / d[axis];
        let b = (half - p0[axis]) / d[axis];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if hi <= lo {
        return Vec::new();
    }

    // Merge the two ascending crossing sequences.
    let xs = plane_crossings(p0[0], d[0], half, n, pitch, lo, hi);
    let ys = plane_crossings(p0[1], d[1], half, n, pitch, lo, hi);
    let mut alphas = Vec::with_capacity(xs.len() + ys.len() + 2);
    alphas.push(lo);
    let (mut i, mut j) = (0, 0);
    while i < xs.len() || j < ys.len() {
        let next = if j >= ys.len() || (i < xs.len() && xs[i] <= ys[j]) {
            i += 1;
            xs[i - 1]
        } else {
            j += 1;
            ys[j - 1]
        };
        alphas.push(next);
    }
    alphas.push(hi);

    let cell = |v: f64| (((v + half) / pitch).floor() as isize).clamp(0, n as isize - 1) as usize;
    let mut hits: Vec<(u32, f64)> = Vec::with_capacity(alphas.len());
    for w in alphas.windows(2) {
        let da = w[1] - w[0];
        if da <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (x, y) = (p0[0] + mid * d[0], p0[1] + mid * d[1]);
        let idx = (cell(y) * n + cell(x)) as u32;
        match hits.last_mut() {
            Some((last, len)) if *last == idx => *len += da * length,
            _ => hits.push((idx, da * length)),
        }
    }
    hits.sort_unstable_by_key(|h| h.0);
    hits.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    hits
}

/// System matrix `H` (rays × pixels, entries in mm). Row `view·n_det + det`.
pub fn build_fanbeam(geom: &FanBeamGeometry) -> Result<SparseMatrix> {
    geom.validate()?;
    let rows = (0..geom.angles_deg.len())
        .flat_map(|v| (0..geom.n_detectors).map(move |d| (v, d)))
        .map(|(v, d)| {
            let (a, b) = geom.ray(v, d);
            trace_ray(a, b, geom.n_pix, geom.pixel_mm)
        })
        .collect();
    SparseMatrix::from_rows(geom.n_pix * geom.n_pix, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::LinearOperator;
    use crate::rng;

    #[test]
    fn single_pixel_chord_lengths() {
        let p = 0.82;
        for deg in [0.0, 10.0, 30.0, 45.0, 60.0, 89.0, 135.0, 200.0] {
            let geom = FanBeamGeometry {
                n_pix: 1,
                pixel_mm: p,
                source_to_iso_mm: 10.0,
                iso_to_detector_mm: 5.0,
                n_detectors: 1,
                detector_pitch_mm: 1.0,
                angles_deg: vec![deg],
            };
            let h = build_fanbeam(&geom).unwrap();
            let t: f64 = f64::to_radians(deg);
            let chord = p / t.cos().abs().max(t.sin().abs());
            let got: f64 = h.row(0).map(|(_, v)| v).sum();
            assert!((got - chord).abs() < 1e-10, "{deg}°: {got} vs {chord}");
        }
    }

    #[test]
    fn axis_aligned_ray_through_grid() {
        // Horizontal ray along the middle of row 1 of a 3×3 grid.
        let hits = trace_ray([-5.0, 0.0], [5.0, 0.0], 3, 1.0);
        assert_eq!(hits.len(), 3);
        assert!(hits
            .iter()
            .all(|&(i, l)| (3..6).contains(&i) && (l - 1.0).abs() < 1e-12));
        assert!(trace_ray([-5.0, 2.0], [5.0, 2.0], 3, 1.0).is_empty());
    }

    #[test]
    fn entries_are_nonnegative_and_deterministic() {
        let geom = FanBeamGeometry::scaled(16, 0.82, 12);
        let a = build_fanbeam(&geom).unwrap();
        assert_eq!(a, build_fanbeam(&geom).unwrap());
        assert!(a.values().iter().all(|&v| v >= 0.0));
        assert_eq!(a.rows(), geom.ray_count());
        // Every pixel is seen by some ray.
        let seen = a.mul_transpose_vec(&vec![1.0; a.rows()]).unwrap();
        assert!(seen.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn transpose_dot_product() {
        let geom = FanBeamGeometry::scaled(16, 0.82, 10);
        let h = build_fanbeam(&geom).unwrap();
        let mut r = rng::stream(3);
        let f = rng::standard_normals(&mut r, h.cols());
        let g = rng::standard_normals(&mut r, h.rows());
        let lhs: f64 = h.apply(&f).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.iter().zip(h.apply_adjoint(&g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-12);
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let mut geom = FanBeamGeometry::scaled(16, 0.82, 4);
        geom.source_to_iso_mm = 5.0;
        assert!(matches!(
            build_fanbeam(&geom),
            Err(Error::DegenerateGeometry(_))
        ));
        let mut geom = FanBeamGeometry::scaled(16, 0.82, 4);
        geom.angles_deg = vec![0.0, 0.0];
        assert!(build_fanbeam(&geom).is_err());
    }

    #[test]
    fn scaled_geometry_defaults() {
        let geom = FanBeamGeometry::scaled(32, 0.82, 120);
        assert_eq!(geom.angles_deg.first(), Some(&0.0));
        assert_eq!(geom.angles_deg.last(), Some(&119.0));
        assert!((geom.angles_deg[1] - 1.0).abs() < 1e-12);
        geom.validate().unwrap();
    }
}
