//! Binary checkpoint format and transfer loading.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! "CXRS"  version:u8=1  count
//! count × { name_len  name(UTF-8)  rank  dims[rank]  values[Πdims](f64) }
//! json_len  json(metadata)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::dataset::PreprocessConfig;
use crate::error::{Error, Result};
use crate::scoring::TargetKind;

pub const MAGIC: &[u8; 4] = b"CXRS";
pub const VERSION: u8 = 1;
const MAX_RANK: u64 = 8;

/// Everything needed to rebuild and use a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub target: Option<TargetKind>,
    pub epochs: usize,
    pub seed: u64,
    pub network: NetworkConfig,
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: CheckpointMeta,
}

pub fn encode_checkpoint(params: &ParamStore, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_u64(&mut out, params.len());
    for (name, t) in params.iter() {
        put_u64(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, t.rank());
        for &d in t.shape() {
            put_u64(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(meta)?;
    put_u64(&mut out, json.len());
    out.extend_from_slice(&json);
    Ok(out)
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// A length that must fit in the remaining input when multiplied by `unit`.
    fn len(&mut self, unit: usize, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(unit as u64) > remaining {
            return Err(Error::Format(format!(
                "{what} {n} exceeds the remaining {remaining} bytes"
            )));
        }
        Ok(n as usize)
    }
}

/// Parses checkpoint bytes. Nothing is returned unless the whole input is valid.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes, not a CXRS checkpoint".into()));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.len(8, "tensor count")?;
    let mut params = ParamStore::new();
    for i in 0..count {
        let name_len = r.len(1, "name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u64("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor `{name}`: rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut len = 1usize;
        for _ in 0..rank {
            let d = r.len(1, "dimension")?;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Format(format!("tensor `{name}`: shape overflows")))?;
            shape.push(d);
        }
        let raw = r.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Format(format!("tensor `{name}`: shape overflows")))?,
            "values",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        params.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    let json_len = r.len(1, "metadata length")?;
    let json = r.take(json_len, "metadata")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let meta = serde_json::from_slice(json).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    Ok(Checkpoint { params, meta })
}

pub fn save_checkpoint(params: &ParamStore, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Rebuilds the exact network stored in a checkpoint.
pub fn network_from_checkpoint(ckpt: &Checkpoint) -> Result<Network> {
    Network::from_params(ckpt.meta.network.clone(), ckpt.params.clone())
}

/// Names touched by [`load_pretrained`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransferReport {
    /// Backbone tensors copied from the checkpoint.
    pub loaded: Vec<String>,
    /// Head tensors and backbone tensors absent from the checkpoint, freshly initialized.
    pub initialized: Vec<String>,
    /// Checkpoint tensors with no counterpart in the network.
    pub ignored: Vec<String>,
}

/// Prefix that marks the replaceable regression head.
pub const HEAD_PREFIX: &str = "head.";

/// Transfer learning: copies every name-matching backbone tensor into a freshly
/// initialized network and leaves the head (plus anything missing) fresh.
pub fn load_pretrained(config: NetworkConfig, pretrained: &ParamStore, seed: u64) -> Result<(Network, TransferReport)> {
    let mut network = Network::new(config, seed)?;
    let mut report = TransferReport::default();
    let mut conflicts = Vec::new();
    for (name, fresh) in network.params().iter() {
        if name.starts_with(HEAD_PREFIX) {
            report.initialized.push(name.to_string());
            continue;
        }
        match pretrained.get(name) {
            Some(t) if t.shape() == fresh.shape() => report.loaded.push(name.to_string()),
            Some(_) => conflicts.push(name.to_string()),
            None => report.initialized.push(name.to_string()),
        }
    }
    if !conflicts.is_empty() {
        return Err(Error::Incompatible { names: conflicts });
    }
    for name in &report.loaded {
        *network.params_mut().get_mut(name).expect("name from network") =
            pretrained.get(name).expect("checked above").clone();
    }
    report.ignored = pretrained
        .names()
        .iter()
        .filter(|n| network.params().index_of(n).is_none())
        .cloned()
        .collect();
    Ok((network, report))
}
