//! Binary checkpoint envelope: an 8-byte magic, a little-endian `u64` payload
//! length, then a JSON payload tagged with its kind. Floats round-trip
//! bit-exactly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::zoo::{TinyDetector, TinyDetectorSpec};

/// `DFMSD`, NUL, format version 1, NUL.
pub const MAGIC: [u8; 8] = *b"DFMSD\0\x01\0";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    payload: T,
}

pub fn encode<T: Serialize>(kind: &str, value: &T) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&Envelope { kind: kind.to_string(), payload: value })
        .map_err(|e| Error::Checkpoint(format!("cannot serialize {kind}: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<T> {
    if bytes.len() < 16 || bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing or wrong magic header".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    if body.len() as u64 != len {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header says {len}",
            body.len()
        )));
    }
    let env: Envelope<serde_json::Value> =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if env.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", env.kind)));
    }
    serde_json::from_value(env.payload).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    std::fs::write(path, encode(kind, value)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(kind, &bytes)
}

pub const DETECTOR: &str = "detector";

#[derive(Serialize, Deserialize)]
struct DetectorBlob {
    spec: TinyDetectorSpec,
    params: ParamStore,
}

pub fn save_detector(path: &Path, det: &TinyDetector) -> Result<()> {
    save(
        path,
        DETECTOR,
        &DetectorBlob {
            spec: det.spec().clone(),
            params: det.params.clone(),
        },
    )
}

pub fn load_detector(path: &Path) -> Result<TinyDetector> {
    let blob: DetectorBlob = load(path, DETECTOR)?;
    TinyDetector::from_params(&blob.spec, blob.params)
}
