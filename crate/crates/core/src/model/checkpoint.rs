//! Versioned checkpoint container.
//!
//! Layout (little-endian): magic `NHCKPT01`, format version `u32`, config TOML
//! (`u32` length + bytes), tensor count `u32`, then per tensor: name (`u16`
//! length + bytes), rank `u8`, dims `u64`×rank, `f32` data; an extra JSON blob
//! (`u32` length + bytes); finally the SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::config::ModelConfig;
use super::params::ModelParams;

const MAGIC: &[u8; 8] = b"NHCKPT01";
const VERSION: u32 = 1;

/// Everything stored in a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    /// Free-form training state (optimizer moments, step counters, lineage).
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.params.validate(&ckpt.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = toml::to_string(&ckpt.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    buf.extend_from_slice(&(ckpt.params.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.params.tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let extra = serde_json::to_vec(&ckpt.extra).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(extra.len() as u32).to_le_bytes());
    buf.extend_from_slice(&extra);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < MAGIC.len() + 32 || &buf[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint(format!("{}: checksum mismatch", path.display())));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let config: ModelConfig = toml::from_str(cfg_text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nl = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(nl)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let data = r
            .take(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    let el = r.u32()? as usize;
    let extra = serde_json::from_slice(r.take(el)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let params = ModelParams { tensors };
    params.validate(&config)?;
    Ok(Checkpoint { config, params, extra })
}
