//! Binary weights file.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "LMGW" | version u16 | k u32 | L u32 | channels u32 | mapping_depth u32 | slope f64
//!        | group_count u32 | { len u32 | len × f32 }* | crc32 u32
//! ```
//!
//! The CRC covers every preceding byte.

use std::path::Path;

use super::{GeneratorConfig, GeneratorWeights};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LMGW";
pub const WEIGHTS_VERSION: u16 = 1;

pub fn weights_to_bytes(weights: &GeneratorWeights) -> Vec<u8> {
    let cfg = &weights.config;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in [cfg.latent_dim, cfg.layers, cfg.channels, cfg.mapping_depth] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.leaky_slope.to_le_bytes());
    let groups = weights.parameter_groups();
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for g in &groups {
        out.extend_from_slice(&(g.len() as u32).to_le_bytes());
        for &x in g {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("weights file ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<GeneratorWeights> {
    if bytes.len() < 10 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format(
            "not a generator weights file (bad magic)".into(),
        ));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let latent_dim = r.u32()? as usize;
    let layers = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let mapping_depth = r.u32()? as usize;
    let leaky_slope = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let config = GeneratorConfig {
        latent_dim,
        layers,
        channels,
        mapping_depth,
        leaky_slope,
    };
    config.validate()?;
    let count = r.u32()? as usize;
    let mut groups = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Format("group too large".into()))?,
        )?;
        groups.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        );
    }
    if r.pos != body.len() {
        return Err(Error::Format(
            "trailing bytes after parameter groups".into(),
        ));
    }
    GeneratorWeights::from_parameter_groups(config, groups)
}

pub fn save_weights(weights: &GeneratorWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<GeneratorWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::init_generator;

    #[test]
    fn save_load_round_trip() {
        let w = init_generator(&GeneratorConfig::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.lmgw");
        save_weights(&w, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
        assert!(load_weights(dir.path().join("missing")).is_err());
    }

    #[test]
    fn truncation_and_magic_errors() {
        let w = init_generator(&GeneratorConfig::default(), 9).unwrap();
        let bytes = weights_to_bytes(&w);
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(
            weights_from_bytes(cut),
            Err(Error::Checksum { .. })
        ));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(weights_from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let w = init_generator(&GeneratorConfig::default(), 9).unwrap();
        let mut bytes = weights_to_bytes(&w);
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            weights_from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
