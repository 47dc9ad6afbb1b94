//! Output directories with hashed file lists and JSON manifests.
//!
//! Manifests carry no timestamps, paths of the output directory or worker
//! counts, so identical inputs give byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::raster::{pgm_bytes, FloatRaster};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL: &str = "pulsepp";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Header shared by every manifest.
pub fn header(command: &str, config: &impl Serialize) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    m.insert("tool".into(), json!(TOOL));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("config".into(), serde_json::to_value(config)?);
    Ok(m)
}

/// A directory being written; every file's SHA-256 is recorded.
pub struct OutputDir {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &to_json_bytes(value)?)
    }

    /// Writes `<stem>.lmfr` and a `<stem>.pgm` preview of `raster · scale`.
    pub fn raster(&mut self, stem: &str, raster: &FloatRaster, scale: f32) -> Result<()> {
        self.write(&format!("{stem}.lmfr"), &raster.to_bytes())?;
        let preview = if scale == 1.0 {
            pgm_bytes(raster)
        } else {
            let scaled = FloatRaster {
                data: raster.data.iter().map(|v| v * scale).collect(),
                ..raster.clone()
            };
            pgm_bytes(&scaled)
        };
        self.write(&format!("{stem}.pgm"), &preview)
    }

    /// Adds the file table and writes `manifest.json`.
    pub fn finish(mut self, mut manifest: Map<String, Value>) -> Result<()> {
        manifest.insert("files".into(), serde_json::to_value(&self.files)?);
        let bytes = to_json_bytes(&Value::Object(manifest))?;
        let path = self.dir.join(MANIFEST);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn files_are_listed_with_hashes() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path().join("x")).unwrap();
        out.write("a.txt", b"abc").unwrap();
        out.finish(header("test", &json!({"k": 1})).unwrap())
            .unwrap();
        let m = read_json(&tmp.path().join("x").join(MANIFEST)).unwrap();
        assert_eq!(m["files"]["a.txt"], json!(sha256_hex(b"abc")));
        assert_eq!(m["command"], json!("test"));
        assert_eq!(m["version"], json!(env!("CARGO_PKG_VERSION")));
    }
}
