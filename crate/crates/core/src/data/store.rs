//! Self-describing `f32` array files.
//!
//! Layout (little-endian): magic `NHARRAY1`, version `u32`, sample rate `f64`,
//! channels `u32`, frames per channel `u64`, SHA-256 of the payload, then the
//! payload as channel-major `f32`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NHARRAY1";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8 + 4 + 8 + 32;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredArray {
    pub sample_rate: f64,
    pub channels: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

fn payload(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes an array and returns the hex SHA-256 of its payload.
pub fn write_array(path: &Path, sample_rate: f64, channels: usize, data: &[f32]) -> Result<String> {
    if channels == 0 || data.len() % channels != 0 {
        return Err(Error::invalid(format!(
            "{} values do not divide into {channels} channels",
            data.len()
        )));
    }
    let body = payload(data);
    let digest = Sha256::digest(&body);
    let mut buf = Vec::with_capacity(HEADER + body.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(channels as u32).to_le_bytes());
    buf.extend_from_slice(&((data.len() / channels) as u64).to_le_bytes());
    buf.extend_from_slice(&digest);
    buf.extend_from_slice(&body);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    Ok(hex(&digest))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and validates an array file; `entry` names it in errors.
pub fn read_array(path: &Path, entry: &str) -> Result<StoredArray> {
    let buf = std::fs::read(path).map_err(|e| Error::data(entry, format!("{}: {e}", path.display())))?;
    let bad = |reason: String| Error::data(entry, format!("{}: {reason}", path.display()));
    if buf.len() < HEADER || &buf[..8] != MAGIC {
        return Err(bad("not an array file".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let sample_rate = f64::from_le_bytes(buf[12..20].try_into().unwrap());
    let channels = u32::from_le_bytes(buf[20..24].try_into().unwrap()) as usize;
    let frames = u64::from_le_bytes(buf[24..32].try_into().unwrap()) as usize;
    let body = &buf[HEADER..];
    let expected = channels * frames * 4;
    if body.len() != expected {
        return Err(bad(format!("payload is {} bytes, header promises {expected}", body.len())));
    }
    if Sha256::digest(body).as_slice() != &buf[32..64] {
        return Err(bad("checksum mismatch".into()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(StoredArray {
        sample_rate,
        channels,
        frames,
        data,
    })
}
