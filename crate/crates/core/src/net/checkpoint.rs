//! Versioned binary checkpoints with a JSON config sidecar.
//!
//! Layout (little-endian): magic `ASFT`, `u32` version, `u32` group count,
//! then per group a `u32` name length, UTF-8 name, `u32` rank, `u64` dims and
//! the `f64` values.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ASFT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";

const MAX_GROUPS: usize = 4096;
const MAX_NAME: usize = 256;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub groups: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * model.n_params());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.groups().len() as u32).to_le_bytes());
    for g in model.groups() {
        out.extend_from_slice(&(g.name.len() as u32).to_le_bytes());
        out.extend_from_slice(g.name.as_bytes());
        out.extend_from_slice(&(g.shape.len() as u32).to_le_bytes());
        for &d in &g.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &model.params()[g.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(corrupt(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn corrupt(msg: String) -> Error {
    Error::Checkpoint(msg)
}

/// Parses a checkpoint without reference to any config.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version as u32 != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let n_groups = r.u32()?;
    if n_groups > MAX_GROUPS {
        return Err(corrupt(format!("{n_groups} groups")));
    }
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let name_len = r.u32()?;
        if name_len > MAX_NAME {
            return Err(corrupt(format!("group name of {name_len} bytes")));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("group name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(corrupt(format!("group {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflow".into()))?;
            count = count.checked_mul(d).ok_or_else(|| corrupt("dimension overflow".into()))?;
            shape.push(d);
        }
        if count.checked_mul(8).is_none_or(|b| b > r.remaining()) {
            return Err(corrupt(format!("group {name} truncated")));
        }
        let values: Vec<f64> = r
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("group {name} has non-finite values")));
        }
        groups.push((name, shape, values));
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { groups })
}

impl Model {
    /// Rebuilds a model, requiring the checkpoint layout to match `config`.
    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint) -> Result<Model> {
        let mut model = Model::new(config)?;
        if ckpt.groups.len() != model.groups().len() {
            return Err(corrupt(format!(
                "checkpoint has {} groups, config implies {}",
                ckpt.groups.len(),
                model.groups().len()
            )));
        }
        let specs = model.groups().to_vec();
        for ((name, shape, values), spec) in ckpt.groups.iter().zip(&specs) {
            if *name != spec.name || *shape != spec.shape {
                return Err(corrupt(format!(
                    "group {name} {shape:?} does not match {} {:?}",
                    spec.name, spec.shape
                )));
            }
            model.params[spec.range()].copy_from_slice(values);
        }
        Ok(model)
    }
}

/// Writes `model.ckpt` and `config.json` into `dir`.
pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    fs::write(&ckpt, encode_checkpoint(model)).map_err(|e| Error::io(&ckpt, e))?;
    let cfg = dir.join(CONFIG_FILE);
    fs::write(&cfg, serde_json::to_vec_pretty(model.config())?).map_err(|e| Error::io(&cfg, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg_bytes = fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let bytes = fs::read(&ckpt_path).map_err(|e| Error::io(&ckpt_path, e))?;
    Model::from_checkpoint(config, &decode_checkpoint(&bytes)?)
}
