//! The `SNV2` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "SNV2"
//! u16     version (= 1)
//! u16     tensor count
//! repeat:
//!   u8    name length, then that many UTF-8 bytes
//!   u8    rank, then `rank` u32 dimensions
//!   f64   payload, product(dims) values, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SNV2";
pub const VERSION: u16 = 1;

/// One named tensor in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        TensorRecord {
            name: name.into(),
            dims,
            data,
        }
    }
}

pub fn encode(records: &[TensorRecord]) -> Result<Vec<u8>> {
    let count = u16::try_from(records.len())
        .map_err(|_| Error::format(0, format!("{} tensors exceed u16", records.len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let name_len = u8::try_from(name.len())
            .map_err(|_| Error::format(out.len() as u64, format!("name {:?} too long", r.name)))?;
        let rank = u8::try_from(r.dims.len())
            .map_err(|_| Error::format(out.len() as u64, format!("rank of {:?} too high", r.name)))?;
        let numel: usize = r.dims.iter().product();
        if numel != r.data.len() {
            return Err(Error::format(
                out.len() as u64,
                format!("{}: dims {:?} but {} values", r.name, r.dims, r.data.len()),
            ));
        }
        out.push(name_len);
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &r.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::format(out.len() as u64, format!("dim {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"SNV2\""));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u16("tensor count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u8("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 1, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(r.pos as u64, format!("{name}: dims {dims:?} overflow")))?;
        let payload = r.take(numel, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        records.push(TensorRecord { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[TensorRecord]) -> Result<()> {
    let bytes = encode(records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<TensorRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
