//! Versioned binary container for identified models.
//!
//! Layout: 8-byte magic, format version (u32 LE), payload length (u64 LE),
//! payload, SHA-256 of the payload. The payload serializes [`SavedModel`]
//! with fixed-width little-endian encoding, so parameter arrays land as flat
//! LE f64 blocks behind their layout descriptors and a round trip is
//! bit-identical. Deliberately no timestamps anywhere: rerunning a pipeline
//! must reproduce the file byte for byte.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvalModel;

pub const MAGIC: &[u8; 8] = b"FRIDENT\0";
pub const FORMAT_VERSION: u32 = 1;

/// An identified model plus the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    /// identification method name, e.g. "lugre" or "lvm"
    pub method: String,
    pub seed: u64,
    pub tool_version: String,
    /// hash of the run configuration this model was produced under
    pub config_hash: String,
    pub model: EvalModel,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn save_model(path: &Path, m: &SavedModel) -> Result<()> {
    let payload =
        bincode::serialize(m).map_err(|e| Error::Config(format!("unserializable model: {e}")))?;
    let mut bytes = Vec::with_capacity(payload.len() + 52);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&Sha256::digest(&payload));
    fs::write(path, bytes)?;
    Ok(())
}

/// Read and fully check a model file. When `expected_config_hash` is given,
/// a stored hash that differs is rejected — the model belongs to some other
/// configuration.
pub fn load_model(path: &Path, expected_config_hash: Option<&str>) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    if bytes.len() < MAGIC.len() + 12 {
        return Err(corrupt(path, "shorter than the fixed header"));
    }
    let (magic, rest) = bytes.split_at(MAGIC.len());
    if magic != MAGIC {
        return Err(corrupt(path, "magic string mismatch: not a model file"));
    }
    let version = u32::from_le_bytes(rest[..4].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!("format version {version} (this build reads {FORMAT_VERSION})"),
        ));
    }
    let len = u64::from_le_bytes(rest[4..12].try_into().unwrap()) as usize;
    let body = &rest[12..];
    if body.len() != len + 32 {
        return Err(corrupt(
            path,
            format!("payload of {} bytes where {} were declared", body.len().saturating_sub(32), len),
        ));
    }
    let (payload, digest) = body.split_at(len);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(corrupt(path, "payload checksum mismatch"));
    }
    let m: SavedModel = bincode::deserialize(payload)
        .map_err(|e| corrupt(path, format!("undecodable payload: {e}")))?;
    m.model.validate()?;
    if let Some(expect) = expected_config_hash {
        if m.config_hash != expect {
            return Err(Error::Config(format!(
                "model was identified under config {} but this run is {}",
                m.config_hash, expect
            )));
        }
    }
    Ok(m)
}
