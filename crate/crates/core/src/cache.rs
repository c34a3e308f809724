//! On-disk model cache.
//!
//! Trained originals are stored as versioned binary blobs keyed by the
//! pretraining digest of the config that produced them, one file per
//! seed: `cache/<hex-digest>/seed<k>.model`. A blob embeds the digest
//! and a trailing SHA-256 checksum, so loading under the wrong config or
//! from a damaged file fails loudly instead of silently retraining or
//! returning garbage.

use crate::config::hex_digest;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"GTMODEL\0";
const VERSION: u32 = 1;

/// Location of one cached model.
pub fn model_path(cache_dir: &Path, digest: &[u8; 32], seed: u64) -> PathBuf {
    cache_dir
        .join(hex_digest(digest))
        .join(format!("seed{seed}.model"))
}

/// Serialize `params` to `path`, embedding `digest`. The write goes
/// through a temporary file and a rename, so an interrupted save never
/// leaves a half-written blob at the final path.
pub fn save_model(path: &Path, digest: &[u8; 32], params: &ModelParams) -> Result<()> {
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&VERSION.to_le_bytes());
    blob.extend_from_slice(digest);
    blob.extend_from_slice(&(params.shapes().len() as u32).to_le_bytes());
    for &(fan_in, fan_out) in params.shapes() {
        blob.extend_from_slice(&(fan_in as u32).to_le_bytes());
        blob.extend_from_slice(&(fan_out as u32).to_le_bytes());
    }
    blob.extend_from_slice(&(params.values().len() as u64).to_le_bytes());
    for v in params.values() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let checksum: [u8; 32] = Sha256::digest(&blob).into();
    blob.extend_from_slice(&checksum);

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("model.tmp");
    std::fs::write(&tmp, &blob)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a cached model, verifying checksum, format version and that it
/// was saved under `expected` — a missing file is a [`Error::CacheMiss`],
/// anything malformed a [`Error::CacheIntegrity`].
pub fn load_model(path: &Path, expected: &[u8; 32]) -> Result<ModelParams> {
    let blob = match std::fs::read(path) {
        Ok(blob) => blob,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::CacheMiss {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let corrupt = |reason: &str| Error::CacheIntegrity {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if blob.len() < 32 {
        return Err(corrupt("file shorter than its checksum"));
    }
    let (body, stored_checksum) = blob.split_at(blob.len() - 32);
    let checksum: [u8; 32] = Sha256::digest(body).into();
    if checksum != stored_checksum {
        return Err(corrupt("checksum mismatch"));
    }

    let mut cursor = body;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(corrupt(&format!("truncated while reading {what}")));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };

    if take(8, "magic")? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(&format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let stored_digest: [u8; 32] = take(32, "config digest")?.try_into().unwrap();
    if &stored_digest != expected {
        return Err(corrupt(
            "config digest mismatch: cached model was trained under a different config",
        ));
    }
    let n_layers = u32::from_le_bytes(take(4, "layer count")?.try_into().unwrap()) as usize;
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let fan_in = u32::from_le_bytes(take(4, "shape")?.try_into().unwrap()) as usize;
        let fan_out = u32::from_le_bytes(take(4, "shape")?.try_into().unwrap()) as usize;
        shapes.push((fan_in, fan_out));
    }
    let n_values = u64::from_le_bytes(take(8, "value count")?.try_into().unwrap()) as usize;
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        let raw = take(8, "values")?;
        values.push(f64::from_le_bytes(raw.try_into().unwrap()));
    }
    if !cursor.is_empty() {
        return Err(corrupt("trailing bytes after values"));
    }
    ModelParams::from_parts(shapes, values)
        .map_err(|e| corrupt(&format!("inconsistent shape data: {e}")))
}
