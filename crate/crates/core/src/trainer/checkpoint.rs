//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! "TARTCKPT"            8 bytes
//! version               u32 (= 1)
//! meta_len              u32
//! meta                  meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! tensor_count          u32
//! per tensor:
//!   name_len            u16
//!   name                name_len bytes
//!   ndim                u8
//!   dims                ndim × u32
//!   data                product(dims) × f32, row-major
//! ```
//!
//! Model parameters are stored under their own names, Adam moments under
//! `adam.m.<name>` and `adam.v.<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::numerics::adam::{FIRST_MOMENT_PREFIX, SECOND_MOMENT_PREFIX};
use crate::numerics::{AdamState, ParameterStore, Tensor};
use crate::reasoner::Reasoner;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TARTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub rng_algorithm: String,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub d_cur: usize,
    pub k_cur: usize,
    /// Most recent per-step losses, oldest first.
    pub loss_tail: Vec<f64>,
    pub best_loss: Option<f64>,
    pub adam_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Reasoner,
    pub adam: Option<AdamState>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&ckpt.meta)?;
    let mut tensors: Vec<(String, Tensor)> = ckpt
        .model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    if let Some(adam) = &ckpt.adam {
        tensors.extend(adam.export(ckpt.model.params())?);
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(meta.len()).map_err(|_| Error::contract("meta too large"))?.to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::contract(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u32("meta length")? as usize;
    let at = r.offset();
    let meta: CheckpointMeta = serde_json::from_str(r.utf8(meta_len, "meta")?)
        .map_err(|e| Error::format(at, format!("invalid checkpoint meta: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = usize::from(r.u16("tensor name length")?);
        let name = r.utf8(name_len, "tensor name")?.to_string();
        let ndim = usize::from(r.u8("ndim")?);
        let at = r.offset();
        let dims = (0..ndim)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(at, "tensor size overflows"))?;
        let data = r.f32s(n, &format!("tensor `{name}` data"))?;
        let t = Tensor::new(&dims, data).map_err(|e| Error::format(at, e.to_string()))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::format(at, format!("duplicate tensor `{name}`")));
        }
    }
    r.finish()?;

    let mut params = ParameterStore::new();
    let mut optimizer = BTreeMap::new();
    for (name, t) in tensors {
        if name.starts_with(FIRST_MOMENT_PREFIX) || name.starts_with(SECOND_MOMENT_PREFIX) {
            optimizer.insert(name, t);
        } else {
            params.insert(name, t)?;
        }
    }
    let model = Reasoner::from_params(&meta.config.reasoner, params)?;
    let adam = if optimizer.is_empty() {
        None
    } else {
        Some(AdamState::import(model.params(), meta.config.adam, meta.adam_step, &optimizer)?)
    };
    Ok(Checkpoint { meta, model, adam })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
