//! Named `f64` tensors and the `T4VC` checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic b"T4VC"
//! 4       4     version u32 (= 1)
//! 8       4     tensor count u32
//! 12      ...   tensor records, in order:
//!                 name length u32, name bytes (UTF-8),
//!                 rank u32, rank × u32 dimensions,
//!                 product(dims) × f64 payload
//! end-4   4     CRC-32 (IEEE) of every byte from offset 12 up to here
//! ```
//!
//! Little-endian throughout. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"T4VC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Tensor {
            name: name.into(),
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    /// Views a rank-2 (or rank-1, as a single row) tensor as a matrix.
    pub fn to_matrix(&self) -> Matrix {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => (1, self.data.len()),
        };
        Matrix::from_vec(r, c, self.data.clone()).expect("tensor shape is consistent")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(self.name.clone(), &self.shape)
    }
}

/// SHA-256 over the little-endian bytes of `values`, hex encoded.
pub fn digest_f64(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} = {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_u32(&mut out, tensors.len(), "tensor count")?;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Dimension(format!(
                "tensor {} has shape {:?} but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        push_u32(&mut out, t.name.len(), "name length")?;
        out.extend_from_slice(t.name.as_bytes());
        push_u32(&mut out, t.shape.len(), "rank")?;
        for &d in &t.shape {
            push_u32(&mut out, d, "dimension")?;
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[12..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if bytes.len() < 16 {
        return Err(Error::format(
            bytes.len() as u64,
            "file too short for a checkpoint",
        ));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected T4VC"));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let crc = crc32fast::hash(&bytes[12..body_end]);
    if crc != stored {
        return Err(Error::format(
            body_end as u64,
            format!("CRC mismatch: stored {stored:#010x}, computed {crc:#010x}"),
        ));
    }
    let mut cur = Cursor {
        bytes: &bytes[..body_end],
        pos: 4,
    };
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = cur.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_at = cur.pos;
        let name_len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format(name_at as u64, "tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32()?;
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = cur
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if cur.pos != body_end {
        return Err(Error::format(
            cur.pos as u64,
            "trailing bytes after the last tensor",
        ));
    }
    Ok(tensors)
}

pub fn write_checkpoint(path: impl AsRef<Path>, tensors: &[Tensor]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
