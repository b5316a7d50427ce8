//! Binary descriptor store.
//!
//! Little-endian layout:
//!
//! ```text
//! offset 0   magic "AIRC" (4 bytes)
//!        4   u32 format version (currently 1)
//!        8   u32 descriptor width n_o
//!       12   u64 record count
//!       20   records, each:
//!              u16 object id byte length, then that many UTF-8 bytes
//!              i64 frame id
//!              n_o * f32 descriptor values
//! ```
//!
//! Descriptors are narrowed to f32 on write; reading widens back to f64 and
//! re-validates the unit-or-zero norm, which the f32 round-trip preserves
//! within the ingestion tolerance.

use crate::error::{Error, Result};
use crate::matcher::DescriptorRecord;
use crate::model::ObjectDescriptor;
use std::path::Path;

pub const STORE_FORMAT_VERSION: u32 = 1;
const STORE_MAGIC: &[u8; 4] = b"AIRC";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

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

    fn i64_le(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Serializes records with descriptor width `n_o`.
pub fn store_to_bytes(n_o: usize, records: &[DescriptorRecord]) -> Result<Vec<u8>> {
    let width = u32::try_from(n_o).map_err(|_| Error::contract("n_o does not fit in u32"))?;
    let mut out = Vec::with_capacity(20 + records.len() * (2 + 16 + 8 + n_o * 4));
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.descriptor.len() != n_o {
            return Err(Error::contract(format!(
                "record `{}`: descriptor width {} does not match store width {n_o}",
                r.object_id,
                r.descriptor.len()
            )));
        }
        let id = r.object_id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::contract(format!("object id of {} bytes is too long", id.len())))?;
        if id_len == 0 {
            return Err(Error::contract("record object id must be non-empty"));
        }
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&r.frame_id.to_le_bytes());
        for &v in r.descriptor.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a complete store. Rejects bad magic, version, truncation, trailing
/// bytes, and any record whose descriptor fails ingestion validation.
pub fn store_from_slice(bytes: &[u8]) -> Result<Vec<DescriptorRecord>> {
    let mut c = Cursor::new(bytes);
    let magic = c.take(4)?;
    if magic != STORE_MAGIC {
        return Err(Error::parse(format!("bad magic {magic:02x?}, expected \"AIRC\"")));
    }
    let version = c.u32_le()?;
    if version != STORE_FORMAT_VERSION {
        return Err(Error::parse(format!(
            "unsupported store version {version}, expected {STORE_FORMAT_VERSION}"
        )));
    }
    let n_o = c.u32_le()? as usize;
    let count = c.u64_le()?;
    let mut records = Vec::new();
    for i in 0..count {
        let wrap = |e: Error| match e {
            Error::Parse(msg) => Error::parse(format!("record {i}: {msg}")),
            other => other,
        };
        let id_len = c.u16_le().map_err(wrap)? as usize;
        if id_len == 0 {
            return Err(Error::parse(format!("record {i}: empty object id")));
        }
        let id = std::str::from_utf8(c.take(id_len).map_err(wrap)?)
            .map_err(|e| Error::parse(format!("record {i}: object id is not UTF-8: {e}")))?
            .to_string();
        let frame_id = c.i64_le().map_err(wrap)?;
        let payload = c.take(n_o * 4).map_err(wrap)?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let descriptor = ObjectDescriptor::new(values)
            .map_err(|e| Error::parse(format!("record {i} (`{id}`): {e}")))?;
        records.push(DescriptorRecord {
            object_id: id,
            frame_id,
            descriptor,
        });
    }
    if !c.finished() {
        return Err(Error::parse(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - c.pos
        )));
    }
    Ok(records)
}

pub fn write_descriptor_store(
    path: impl AsRef<Path>,
    n_o: usize,
    records: &[DescriptorRecord],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = store_to_bytes(n_o, records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_descriptor_store(path: impl AsRef<Path>) -> Result<Vec<DescriptorRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    store_from_slice(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
