//! Named-tensor container (`PXUN`), the on-disk format for checkpoints,
//! measurement files and serialized operators.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PXUN" | version: u16 | count: u32
//! per entry: name_len: u16 | name: UTF-8 | rank: u8 | extents: u32 × rank
//!            | width: u8 (4, 8, or 1 for raw bytes) | payload
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PXUN";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    /// Opaque byte blob (width 1), used for JSON headers.
    Bytes(Vec<u8>),
}

impl Entry {
    pub fn width(&self) -> u8 {
        match self {
            Entry::F32(_) => 4,
            Entry::F64(_) => 8,
            Entry::Bytes(_) => 1,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Entry::F32(t) => t.shape().to_vec(),
            Entry::F64(t) => t.shape().to_vec(),
            Entry::Bytes(b) => vec![b.len()],
        }
    }

    /// Stores `t` at its native width.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        if T::WIDTH == 4 {
            Entry::F32(t.cast())
        } else {
            Entry::F64(t.cast())
        }
    }

    /// Values converted to `T`; `None` for byte blobs.
    pub fn to_tensor<T: Scalar>(&self) -> Option<Tensor<T>> {
        match self {
            Entry::F32(t) => Some(t.cast()),
            Entry::F64(t) => Some(t.cast()),
            Entry::Bytes(_) => None,
        }
    }

    /// Values widened to `f64`; `None` for byte blobs.
    pub fn to_f64(&self) -> Option<Tensor<f64>> {
        match self {
            Entry::F32(t) => Some(t.cast()),
            Entry::F64(t) => Some(t.clone()),
            Entry::Bytes(_) => None,
        }
    }
}

pub fn write_container<W: Write>(mut out: W, entries: &[(String, Entry)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, entry) in entries {
        let nb = name.as_bytes();
        let nlen = u16::try_from(nb.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        buf.extend_from_slice(&nlen.to_le_bytes());
        buf.extend_from_slice(nb);
        let shape = entry.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("rank too large: {name}")))?;
        buf.push(rank);
        for &e in &shape {
            let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent too large: {name}")))?;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        buf.push(entry.width());
        match entry {
            Entry::F32(t) => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            Entry::F64(t) => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            Entry::Bytes(b) => buf.extend_from_slice(b),
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_container<R: Read>(mut input: R) -> Result<Vec<(String, Entry)>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(nlen)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let width = cur.u8()?;
        let entry = match width {
            4 => {
                let raw = cur.take(n * 4)?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Entry::F32(Tensor::new(shape, data)?)
            }
            8 => {
                let raw = cur.take(n * 8)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Entry::F64(Tensor::new(shape, data)?)
            }
            1 => Entry::Bytes(cur.take(n)?.to_vec()),
            w => return Err(Error::Format(format!("entry {name}: unsupported scalar width {w}"))),
        };
        entries.push((name, entry));
    }
    if cur.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(entries)
}

/// Looks up an entry by name.
pub fn find<'a>(entries: &'a [(String, Entry)], name: &str) -> Option<&'a Entry> {
    entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
}
