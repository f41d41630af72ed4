//! Parameter snapshots on disk.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        5 bytes  "FLSN1"
//! entries      u32
//! per entry:   layer u32, name_len u32, name (utf-8), ndim u32, dims u64 x ndim
//! values       u64 count, then f64 x count
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{ParamLayout, ParamSpec, ParamVector};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FLSN1";

pub fn encode_checkpoint(params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let entries = params.layout().entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.layer as u32).to_le_bytes());
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.data() {
        out.extend_from_slice(&v.to_le_bytes());
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
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamVector> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(5)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let n_entries = c.u32()? as usize;
    let mut entries = Vec::with_capacity(n_entries.min(1024));
    for _ in 0..n_entries {
        let layer = c.u32()? as usize;
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?
            .to_owned();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        entries.push(ParamSpec { layer, name, shape });
    }
    let count = c.u64()? as usize;
    let layout = ParamLayout::new(entries);
    if layout.total_len() != count {
        return Err(Error::Checkpoint(format!(
            "layout describes {} values, file holds {count}",
            layout.total_len()
        )));
    }
    let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let data = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    ParamVector::new(Arc::new(layout), data)
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ParamVector) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamVector> {
    decode_checkpoint(&fs::read(path)?)
}
