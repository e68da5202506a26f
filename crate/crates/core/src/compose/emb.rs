//! Embedding sets and the TARTEMB exchange file.
//!
//! ```text
//! "TARTEMB\0"           8 bytes
//! version               u32 (= 1)
//! dim                   u32
//! n                     u64
//! has_labels            u8 (0 or 1)
//! meta_len              u32
//! meta                  meta_len bytes of UTF-8
//! labels                n bytes, present iff has_labels = 1
//! data                  n × dim f32, little-endian, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, write_atomic, ByteReader};
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 8] = b"TARTEMB\0";
pub const EMB_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<Vec<f32>>,
    labels: Option<Vec<u8>>,
    /// Free-form provenance: model id, protocol, dataset.
    pub meta: String,
}

impl EmbeddingSet {
    pub fn new(dim: usize, vectors: Vec<Vec<f32>>, labels: Option<Vec<u8>>, meta: impl Into<String>) -> Result<Self> {
        if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
            return Err(Error::contract(format!(
                "vector {i} has dimension {}, expected {dim}",
                vectors[i].len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != vectors.len() {
                return Err(Error::contract(format!(
                    "{} labels for {} vectors",
                    l.len(),
                    vectors.len()
                )));
            }
            if l.iter().any(|&y| y > 1) {
                return Err(Error::contract("labels must be 0 or 1"));
            }
        }
        Ok(Self {
            dim,
            vectors,
            labels,
            meta: meta.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Labels, or a contract error naming `what` when absent.
    pub fn require_labels(&self, what: &str) -> Result<&[u8]> {
        self.labels()
            .ok_or_else(|| Error::contract(format!("{what} requires a labeled embedding set")))
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::contract(format!("row {i} out of range for {} rows", self.len())));
        }
        Ok(Self {
            dim: self.dim,
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            meta: self.meta.clone(),
        })
    }
}

pub fn encode_emb(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let dim = u32::try_from(set.dim).map_err(|_| Error::contract("dimension exceeds u32"))?;
    let meta_len = u32::try_from(set.meta.len()).map_err(|_| Error::contract("meta exceeds u32"))?;
    let mut out = Vec::with_capacity(33 + set.meta.len() + set.len() * (1 + 4 * set.dim));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.push(u8::from(set.labels.is_some()));
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(set.meta.as_bytes());
    if let Some(l) = &set.labels {
        out.extend_from_slice(l);
    }
    for v in &set.vectors {
        put_f32s(&mut out, v);
    }
    Ok(out)
}

pub fn decode_emb(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(EMB_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != EMB_VERSION {
        return Err(Error::format(at, format!("unsupported TARTEMB version {version}")));
    }
    let dim = r.u32("dimension")? as usize;
    let at = r.offset();
    let n = usize::try_from(r.u64("row count")?).map_err(|_| Error::format(at, "row count overflows"))?;
    let at = r.offset();
    let has_labels = match r.u8("label flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::format(at, format!("label flag must be 0 or 1, got {other}"))),
    };
    let meta_len = r.u32("meta length")? as usize;
    let meta = r.utf8(meta_len, "meta")?.to_string();
    let labels = if has_labels {
        let at = r.offset();
        let l = r.bytes(n, "labels")?.to_vec();
        if let Some(i) = l.iter().position(|&y| y > 1) {
            return Err(Error::format(at + i as u64, format!("label {} is not 0 or 1", l[i])));
        }
        Some(l)
    } else {
        None
    };
    let at = r.offset();
    let total = n
        .checked_mul(dim)
        .ok_or_else(|| Error::format(at, "payload size overflows"))?;
    let data = r.f32s(total, "embedding payload")?;
    r.finish()?;
    let vectors = if dim == 0 {
        vec![Vec::new(); n]
    } else {
        data.chunks_exact(dim).map(<[f32]>::to_vec).collect()
    };
    EmbeddingSet::new(dim, vectors, labels, meta)
}

pub fn write_emb(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_emb(set)?)
}

pub fn read_emb(path: &Path) -> Result<EmbeddingSet> {
    decode_emb(&fs::read(path)?)
}
