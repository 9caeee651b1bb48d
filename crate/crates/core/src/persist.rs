//! Two-file persistence for fitted models: `<base>.json` carries the manifest,
//! `<base>.bin` the raw little-endian `f64` parameters.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, "json")
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_suffix(base, "bin")
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Accepts either the shared basename or one of the two files of the pair.
pub fn normalize_base(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64s(bytes: &[u8], expected: usize, what: &str) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::invariant(
            what.to_string(),
            format!("blob holds {} bytes, expected {}", bytes.len(), expected * 8),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn save(base: &Path, manifest: &Value, params: &[f64]) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    fs::write(manifest_path(base), json)?;
    fs::write(blob_path(base), encode_f64s(params))?;
    Ok(())
}

pub fn load(base: &Path) -> Result<(Value, Vec<u8>)> {
    let base = normalize_base(base);
    let manifest: Value = serde_json::from_slice(&fs::read(manifest_path(&base))?)?;
    let blob = fs::read(blob_path(&base))?;
    Ok((manifest, blob))
}
