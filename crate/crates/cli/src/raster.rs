//! Float rasters and 16-bit PGM export.
//!
//! `.lmfr` layout (little-endian): `"LMFR" | width u32 | height u32 |
//! channels u32 | width·height·channels × f32 | crc32`, the CRC covering all
//! preceding bytes.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

pub const RASTER_MAGIC: &[u8; 4] = b"LMFR";
const HEADER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        let want = width as usize * height as usize * channels as usize;
        ensure!(
            data.len() == want,
            "raster payload has {} values, {width}×{height}×{channels} needs {want}",
            data.len()
        );
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel raster from `f64` pixels, rounded to `f32`.
    pub fn gray(width: usize, height: usize, pixels: &[f64]) -> Result<Self> {
        Self::new(
            u32::try_from(width)?,
            u32::try_from(height)?,
            1,
            pixels.iter().map(|&p| p as f32).collect(),
        )
    }

    pub fn pixels_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&p| p as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 4 * self.data.len() + 4);
        out.extend_from_slice(RASTER_MAGIC);
        for v in [self.width, self.height, self.channels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        self.data
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER + 4 || &bytes[..4] != RASTER_MAGIC {
            bail!("not a float raster (bad magic or truncated header)");
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into()?);
        let computed = crc32fast::hash(body);
        if stored != computed {
            bail!("raster checksum mismatch: stored {stored:#010x}, computed {computed:#010x}");
        }
        let u32_at = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
        let (width, height, channels) = (u32_at(4), u32_at(8), u32_at(12));
        let n = width as usize * height as usize * channels as usize;
        ensure!(
            body.len() == HEADER + 4 * n,
            "raster body has {} bytes, header implies {}",
            body.len(),
            HEADER + 4 * n
        );
        let data = body[HEADER..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(width, height, channels, data)
    }
}

pub fn raster_write(path: impl AsRef<Path>, raster: &FloatRaster) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster.to_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn raster_read(path: impl AsRef<Path>) -> Result<FloatRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    FloatRaster::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Binary 16-bit PGM of the first channel; `[0, 1]` maps to `[0, 65535]`
/// and values outside are clamped.
pub fn pgm_bytes(raster: &FloatRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", raster.width, raster.height).into_bytes();
    for px in raster.data.iter().step_by(raster.channels.max(1) as usize) {
        let q = (f64::from(*px).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn pgm_export(path: impl AsRef<Path>, raster: &FloatRaster) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pgm_bytes(raster)).with_context(|| format!("writing {}", path.display()))
}
