//! Model checkpoint file.
//!
//! Little-endian layout:
//!
//! ```text
//! offset 0   magic "AIRM" (4 bytes)
//!        4   u32 format version (currently 1)
//!        8   u64 n_p, n_m, n_o, attention_layers, branch_hidden, pos_hidden
//!       56   u8 head kind: 0 dual-branch, 1 dense ablation
//!       57   u32 tensor count
//!            tensors, each:
//!              u16 name byte length, then that many UTF-8 bytes
//!              u32 rank, then rank u64 dimensions
//!              row-major f64 payload (product of dimensions values)
//! ```
//!
//! Tensors are written in the model's canonical parameter order, so a given
//! parameter set always serializes to identical bytes.

use crate::error::{Error, Result};
use crate::model::{HeadKind, ModelDims, ModelParams};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"AIRM";

pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let named = params.named();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    for v in [
        dims.n_p,
        dims.n_m,
        dims.n_o,
        dims.attention_layers,
        dims.branch_hidden,
        dims.pos_hidden,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(match params.head_kind() {
        HeadKind::Sparse => 0,
        HeadKind::Dense => 1,
    });
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        let name_bytes = name.as_bytes();
        debug_assert!(name_bytes.len() <= u16::MAX as usize);
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::parse(format!(
                    "truncated at byte {}: wanted {n} more bytes, {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16_le(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and validates a complete checkpoint: dimensions, head kind, and
/// the exact expected set of named tensors with matching shapes and finite
/// values.
pub fn checkpoint_from_slice(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(format!("bad magic {magic:02x?}, expected \"AIRM\"")));
    }
    let version = c.u32_le()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::parse(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
        )));
    }
    let mut dim = || -> Result<usize> {
        usize::try_from(c.u64_le()?).map_err(|_| Error::parse("dimension does not fit in usize"))
    };
    let dims = ModelDims {
        n_p: dim()?,
        n_m: dim()?,
        n_o: dim()?,
        attention_layers: dim()?,
        branch_hidden: dim()?,
        pos_hidden: dim()?,
    };
    dims.validate()
        .map_err(|e| Error::parse(format!("bad dimension header: {e}")))?;
    let head = match c.take(1)?[0] {
        0 => HeadKind::Sparse,
        1 => HeadKind::Dense,
        other => return Err(Error::parse(format!("unknown head kind byte {other}"))),
    };
    let count = c.u32_le()?;
    let mut tensors = BTreeMap::new();
    for i in 0..count {
        let name_len = c.u16_le()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::parse(format!("tensor {i}: name is not UTF-8: {e}")))?
            .to_string();
        let rank = c.u32_le()? as usize;
        let mut shape = Vec::new();
        let mut elems = 1usize;
        for _ in 0..rank {
            let d = usize::try_from(c.u64_le()?)
                .map_err(|_| Error::parse(format!("tensor `{name}`: dimension overflow")))?;
            elems = elems
                .checked_mul(d)
                .ok_or_else(|| Error::parse(format!("tensor `{name}`: element count overflow")))?;
            shape.push(d);
        }
        let payload = c.take(
            elems
                .checked_mul(8)
                .ok_or_else(|| Error::parse(format!("tensor `{name}`: payload size overflow")))?,
        )?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::parse(format!("tensor `{name}` contains non-finite values")));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::parse(format!("tensor `{name}`: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::parse(format!("duplicate tensor `{name}`")));
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(format!(
            "{} trailing bytes after {count} tensors",
            bytes.len() - c.pos
        )));
    }
    ModelParams::from_named(dims, head, tensors)
        .map_err(|e| Error::parse(format!("inconsistent checkpoint: {e}")))
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_slice(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
