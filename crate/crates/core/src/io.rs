//! Tensor container files: a JSON header followed by a flat little-endian `f32` payload.
//!
//! Layout: `u64 LE header length | header JSON (UTF-8) | f32 LE values`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode<H: Serialize>(header: &H, payload: &[f32]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len() * 4);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f32>)> {
    if bytes.len() < 8 {
        return Err(Error::Data("tensor file shorter than its length prefix".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if len > body.len() {
        return Err(Error::Data(format!(
            "header length {len} exceeds file size {}",
            bytes.len()
        )));
    }
    let header = serde_json::from_slice(&body[..len])?;
    let payload = &body[len..];
    if !payload.len().is_multiple_of(4) {
        return Err(Error::Data(format!(
            "payload of {} bytes is not a whole number of f32 values",
            payload.len()
        )));
    }
    Ok((header, read_f32_le(payload)))
}

pub fn read_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn write<H: Serialize>(path: &Path, header: &H, payload: &[f32]) -> Result<()> {
    write_bytes(path, &encode(header, payload)?)
}

/// Writes raw bytes, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
