//! Portable binary array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PCMD"            4 bytes
//! version           u32 (= 1)
//! ndim              u32
//! sizes             ndim × u64
//! element type      u32 (= 1, f64 little-endian)
//! axis labels       ndim × (u32 byte length, UTF-8 bytes)
//! payload           product(sizes) × 8 bytes, row-major
//! crc32             u32 over every preceding byte
//! ```

use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCMD";
pub const VERSION: u32 = 1;
pub const TYPE_F64_LE: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    pub labels: Vec<String>,
    pub data: ArrayD<f64>,
}

impl ArrayContainer {
    pub fn new(data: ArrayD<f64>, labels: &[&str]) -> Result<Self> {
        if labels.len() != data.ndim() {
            return Err(Error::Shape(format!(
                "{} labels for a {}-dimensional array",
                labels.len(),
                data.ndim()
            )));
        }
        Ok(Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            data,
        })
    }
}

pub fn encode(data: ArrayViewD<'_, f64>, labels: &[&str]) -> Result<Vec<u8>> {
    if labels.len() != data.ndim() {
        return Err(Error::Shape(format!(
            "{} labels for a {}-dimensional array",
            labels.len(),
            data.ndim()
        )));
    }
    let mut out = Vec::with_capacity(64 + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(data.ndim() as u32).to_le_bytes());
    for &s in data.shape() {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&TYPE_F64_LE.to_le_bytes());
    for l in labels {
        out.extend_from_slice(&(l.len() as u32).to_le_bytes());
        out.extend_from_slice(l.as_bytes());
    }
    // `iter` walks in logical row-major order regardless of memory layout.
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail("truncated container")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ArrayContainer> {
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < 4 + 4 {
        return Err(r.fail("truncated container"));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if r.take(4)? != MAGIC {
        return Err(r.fail("bad magic"));
    }
    if crc32fast::hash(body) != stored {
        return Err(r.fail("checksum mismatch"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let ndim = r.u32()? as usize;
    if ndim > 32 {
        return Err(r.fail(format!("implausible dimension count {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(usize::try_from(r.u64()?).map_err(|_| r.fail("dimension too large"))?);
    }
    let tag = r.u32()?;
    if tag != TYPE_F64_LE {
        return Err(r.fail(format!("unsupported element type {tag}")));
    }
    let mut labels = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let n = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(n)?).map_err(|_| r.fail("axis label is not UTF-8"))?;
        labels.push(s.to_string());
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| r.fail("size overflow"))?;
    let remaining = body.len() - r.pos;
    if count.checked_mul(8) != Some(remaining) {
        return Err(r.fail(format!("payload is {remaining} bytes, expected {count} × 8")));
    }
    let values: Vec<f64> = r
        .take(remaining)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = ArrayD::from_shape_vec(IxDyn(&shape), values).expect("payload length checked");
    Ok(ArrayContainer { labels, data })
}

pub fn write_array(path: &Path, data: ArrayViewD<'_, f64>, labels: &[&str]) -> Result<()> {
    let bytes = encode(data, labels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<ArrayContainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Reads a container and checks its rank.
pub fn read_array_ndim(path: &Path, ndim: usize) -> Result<ArrayContainer> {
    let c = read_array(path)?;
    if c.data.ndim() != ndim {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {ndim} dimensions, found {}", c.data.ndim()),
        });
    }
    Ok(c)
}
