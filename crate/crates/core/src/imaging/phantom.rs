//! Synthetic test objects.
//!
//! Phantoms live in normalized coordinates: the image covers `[−1, 1]²`,
//! `x` increasing with column and `y` with row, matching the fan-beam pixel
//! layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::ObjectImage;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Ellipses,
    Checker,
}

/// An additive ellipse: `value` inside, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle: f64,
    pub value: f64,
}

impl Ellipse {
    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [
            (c * dx + s * dy) / self.axes[0],
            (-s * dx + c * dy) / self.axes[1],
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let q = self.local(p);
        q[0] * q[0] + q[1] * q[1] <= 1.0
    }

    /// Length of the part of the line through `p0` and `p1` inside the
    /// ellipse.
    pub fn chord(&self, p0: [f64; 2], p1: [f64; 2]) -> f64 {
        let q0 = self.local(p0);
        let q1 = self.local(p1);
        let dq = [q1[0] - q0[0], q1[1] - q0[1]];
        let a = dq[0] * dq[0] + dq[1] * dq[1];
        let b = 2.0 * (q0[0] * dq[0] + q0[1] * dq[1]);
        let c = q0[0] * q0[0] + q0[1] * q0[1] - 1.0;
        let disc = b * b - 4.0 * a * c;
        if a == 0.0 || disc <= 0.0 {
            return 0.0;
        }
        let dt = disc.sqrt() / a;
        dt * (p1[0] - p0[0]).hypot(p1[1] - p0[1])
    }
}

/// A constant background plus a sum of ellipses.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsePhantom {
    pub background: f64,
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantom {
    /// One large body ellipse with three smaller inclusions at seeded
    /// positions inside it.
    pub fn random(seed: u64) -> Self {
        let mut r = rng::stream(seed);
        let body = Ellipse {
            center: [r.random_range(-0.05..0.05), r.random_range(-0.05..0.05)],
            axes: [r.random_range(0.65..0.8), r.random_range(0.5..0.65)],
            angle: r.random_range(-0.3..0.3),
            value: 0.45,
        };
        let mut ellipses = vec![body];
        for _ in 0..3 {
            let rad = r.random_range(0.0..0.45);
            let phi = r.random_range(0.0..std::f64::consts::TAU);
            ellipses.push(Ellipse {
                center: [
                    body.center[0] + rad * phi.cos(),
                    body.center[1] + 0.8 * rad * phi.sin(),
                ],
                axes: [r.random_range(0.06..0.16), r.random_range(0.06..0.16)],
                angle: r.random_range(0.0..std::f64::consts::PI),
                value: r.random_range(0.1..0.15),
            });
        }
        Self {
            background: 0.05,
            ellipses,
        }
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.background
            + self
                .ellipses
                .iter()
                .filter(|e| e.contains(p))
                .map(|e| e.value)
                .sum::<f64>()
    }

    /// Renders with 4×4 supersampling per pixel.
    pub fn render(&self, width: usize, height: usize) -> Result<ObjectImage> {
        const SS: usize = 4;
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let mut acc = 0.0;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let x =
                            (col as f64 + (sx as f64 + 0.5) / SS as f64) / width as f64 * 2.0 - 1.0;
                        let y = (row as f64 + (sy as f64 + 0.5) / SS as f64) / height as f64 * 2.0
                            - 1.0;
                        acc += self.value_at([x, y]);
                    }
                }
                pixels.push((acc / (SS * SS) as f64).clamp(1e-6, 1.0 - 1e-6));
            }
        }
        ObjectImage::new(width, height, pixels)
    }

    /// Line integral along the segment `p0 → p1` for a square image of
    /// half-width `half_extent`; points and result share the same length
    /// unit. Both endpoints must lie outside the image.
    pub fn line_integral(&self, p0: [f64; 2], p1: [f64; 2], half_extent: f64) -> f64 {
        let n0 = [p0[0] / half_extent, p0[1] / half_extent];
        let n1 = [p1[0] / half_extent, p1[1] / half_extent];
        let normalized = self.background * square_chord(n0, n1)
            + self
                .ellipses
                .iter()
                .map(|e| e.value * e.chord(n0, n1))
                .sum::<f64>();
        normalized * half_extent
    }
}

/// Length of the segment `p0 → p1` inside `[−1, 1]²`.
fn square_chord(p0: [f64; 2], p1: [f64; 2]) -> f64 {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p0[axis].abs() >= 1.0 {
                return 0.0;
            }
            continue;
        }
        let a = (-1.0 - p0[axis]) / d[axis];
        let b = (1.0 - p0[axis]) / d[axis];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi - lo).max(0.0) * d[0].hypot(d[1])
}

fn checker(width: usize, height: usize, seed: u64) -> Result<ObjectImage> {
    let mut r = rng::stream(seed);
    let cell = r.random_range(3..=6usize);
    let (ox, oy) = (r.random_range(0..cell), r.random_range(0..cell));
    let (lo, hi) = (r.random_range(0.15..0.3), r.random_range(0.55..0.75));
    let pixels = (0..height)
        .flat_map(|row| (0..width).map(move |col| ((row + oy) / cell + (col + ox) / cell) % 2 == 0))
        .map(|on| if on { hi } else { lo })
        .collect();
    ObjectImage::new(width, height, pixels)
}

/// Deterministic synthetic object with values in `(0, 1)`.
pub fn phantom_generate(
    kind: PhantomKind,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<ObjectImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("phantom dimensions must be positive"));
    }
    match kind {
        PhantomKind::Ellipses => EllipsePhantom::random(seed).render(width, height),
        PhantomKind::Checker => checker(width, height, seed),
    }
}
