//! Parameter serialization: a JSON layout manifest next to a raw
//! little-endian `f64` payload. Round-trips are bit-exact, and the manifest
//! records a SHA-256 of the payload so corruption is caught on load.

use super::store::ParamStore;
use super::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "params.json";
pub const PAYLOAD_FILE: &str = "params.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("payload length {got} does not match manifest ({want})")]
    PayloadLength { want: usize, got: usize },
    #[error("payload hash mismatch: manifest {want}, file {got}")]
    PayloadHash { want: String, got: String },
    #[error("invalid checkpoint entry {name}: {detail}")]
    Entry { name: String, detail: String },
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    entries: Vec<Entry>,
    payload_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Writes `params.json` and `params.bin` into `dir` (created if missing).
pub fn save(store: &ParamStore, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut payload = Vec::with_capacity(store.numel() * 8);
    let mut entries = Vec::with_capacity(store.len());
    for p in store.iter() {
        let offset = payload.len() / 8;
        for &v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            len: p.value.numel(),
        });
    }
    let manifest = Manifest {
        entries,
        payload_sha256: sha256_hex(&payload),
    };
    fs::write(dir.join(PAYLOAD_FILE), &payload)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Reads a checkpoint back into a fresh store, verifying the payload hash.
pub fn load(dir: &Path) -> Result<ParamStore, CheckpointError> {
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let payload = fs::read(dir.join(PAYLOAD_FILE))?;
    let got = sha256_hex(&payload);
    if got != manifest.payload_sha256 {
        return Err(CheckpointError::PayloadHash {
            want: manifest.payload_sha256,
            got,
        });
    }
    let total: usize = manifest.entries.iter().map(|e| e.len).sum();
    if payload.len() != total * 8 {
        return Err(CheckpointError::PayloadLength {
            want: total * 8,
            got: payload.len(),
        });
    }
    let mut store = ParamStore::new();
    for e in &manifest.entries {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(CheckpointError::Entry {
                name: e.name.clone(),
                detail: format!("shape {:?} does not cover {} values", e.shape, e.len),
            });
        }
        let start = e.offset * 8;
        let end = start + e.len * 8;
        if end > payload.len() {
            return Err(CheckpointError::Entry {
                name: e.name.clone(),
                detail: "payload range out of bounds".into(),
            });
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let value = Tensor::new(e.shape.clone(), data).map_err(|err| CheckpointError::Entry {
            name: e.name.clone(),
            detail: err.to_string(),
        })?;
        store
            .register(&e.name, value)
            .map_err(|err| CheckpointError::Entry {
                name: e.name.clone(),
                detail: err.to_string(),
            })?;
    }
    Ok(store)
}
