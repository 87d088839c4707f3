//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` reserved (zero);
//! `u64` metadata length and that many bytes of JSON; the payload as
//! little-endian `f64` arrays in manifest order; a CRC32 of everything
//! before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HarnessError;
use crate::state::StateDict;

pub const MAGIC: &[u8; 8] = b"IMRLCKPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    manifest: Vec<ManifestEntry>,
    meta: Value,
}

pub fn encode(meta: &Value, arrays: &StateDict) -> Vec<u8> {
    let manifest = arrays
        .iter()
        .map(|(name, v)| ManifestEntry {
            name: name.clone(),
            len: v.len(),
        })
        .collect();
    let json = serde_json::to_vec(&Metadata {
        manifest,
        meta: meta.clone(),
    })
    .expect("metadata serializes");
    let payload_len: usize = arrays.iter().map(|(_, v)| v.len() * 8).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 + json.len() + payload_len + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in arrays.iter() {
        for x in values {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Value, StateDict), HarnessError> {
    let corrupt = |m: &str| HarnessError::Checkpoint(m.to_string());
    if bytes.len() < HEADER_LEN + 8 + 4 {
        return Err(corrupt("file shorter than header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(HarnessError::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let meta_len = u64::from_le_bytes(body[16..24].try_into().expect("8 bytes")) as usize;
    let meta_end = 24usize
        .checked_add(meta_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("truncated metadata"))?;
    let md: Metadata = serde_json::from_slice(&body[24..meta_end])
        .map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
    let payload = &body[meta_end..];
    let expected: usize = md.manifest.iter().map(|m| m.len * 8).sum();
    if payload.len() != expected {
        return Err(HarnessError::Checkpoint(format!(
            "payload holds {} bytes, manifest describes {expected}",
            payload.len()
        )));
    }
    let mut dict = StateDict::new();
    let mut chunks = payload.chunks_exact(8);
    for entry in md.manifest {
        let values = chunks
            .by_ref()
            .take(entry.len)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        dict.insert(entry.name, values);
    }
    Ok((md.meta, dict))
}

pub fn save(path: &Path, meta: &Value, arrays: &StateDict) -> Result<(), HarnessError> {
    std::fs::write(path, encode(meta, arrays))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Value, StateDict), HarnessError> {
    decode(&std::fs::read(path)?)
}
