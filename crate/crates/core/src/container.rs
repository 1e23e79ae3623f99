//! Versioned binary container for parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic[4] | version u32 | header_len u64 | header (JSON, UTF-8)
//! n_tensors u64 | { len u64 | len × f64 } ...
//! ```
//!
//! The JSON header carries every hyperparameter needed to interpret the
//! tensors; floats are stored bit-exact.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub fn write<W: Write, H: Serialize>(
    w: &mut W,
    magic: &[u8; 4],
    header: &H,
    tensors: &[&[f64]],
) -> Result<()> {
    let header = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: std::io::Error| Error::Format(e.to_string());
    w.write_all(magic).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&header).map_err(io)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())
        .map_err(io)?;
    for t in tensors {
        w.write_all(&(t.len() as u64).to_le_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in *t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read<R: Read, H: DeserializeOwned>(
    r: &mut R,
    magic: &[u8; 4],
) -> Result<(H, Vec<Vec<f64>>)> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let hlen = read_u64(r)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let header = serde_json::from_slice(&hbuf).map_err(|e| Error::Format(e.to_string()))?;
    let n = read_u64(r)? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u64(r)? as usize;
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated tensor: {e}")))?;
        tensors.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok((header, tensors))
}

/// Pops tensors in write order, checking lengths.
pub(crate) struct TensorReader {
    tensors: std::vec::IntoIter<Vec<f64>>,
}

impl TensorReader {
    pub(crate) fn new(tensors: Vec<Vec<f64>>) -> Self {
        TensorReader {
            tensors: tensors.into_iter(),
        }
    }

    pub(crate) fn next(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let t = self
            .tensors
            .next()
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if t.len() != len {
            return Err(Error::Format(format!(
                "tensor {name}: expected {len} values, found {}",
                t.len()
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "tensor {name} has non-finite values"
            )));
        }
        Ok(t)
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        if self.tensors.next().is_some() {
            return Err(Error::Format("trailing tensors".into()));
        }
        Ok(())
    }
}
