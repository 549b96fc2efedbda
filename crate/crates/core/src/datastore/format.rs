//! The `T4V1` feature file.
//!
//! ```text
//! offset        size      field
//! 0             4         magic  b"T4V1"
//! 4             4         version u32 (= 1)
//! 8             4         n   u32  videos
//! 12            4         T   u32  frames per video
//! 16            4         d   u32  embedding width
//! 20            4·n       labels, u32 each
//! 20+4n         4·n·T·d   payload, f32, video-major then frame then channel
//! 20+4n+4nTd    4         CRC-32 (IEEE) of the payload bytes
//! ```
//!
//! All integers and floats are little-endian. Text-embedding files are the
//! `T = 1` case with `n = c` and labels `0..c`. Class names and the split are
//! not stored here; they come from the manifest.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::store::{FeatureStore, Split};

pub const MAGIC: &[u8; 4] = b"T4V1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Decoded header fields, exposed for inspection tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHeader {
    pub version: u32,
    pub n: u32,
    pub frames: u32,
    pub dim: u32,
}

impl StoreHeader {
    fn payload_offset(&self) -> usize {
        HEADER_LEN + 4 * self.n as usize
    }

    fn payload_len(&self) -> usize {
        4 * self.n as usize * self.frames as usize * self.dim as usize
    }

    pub fn file_len(&self) -> usize {
        self.payload_offset() + self.payload_len() + 4
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} = {v} exceeds u32")))
}

pub fn encode_store(store: &FeatureStore) -> Result<Vec<u8>> {
    let n = to_u32(store.len(), "n")?;
    let t = to_u32(store.frames(), "T")?;
    let d = to_u32(store.dim(), "d")?;
    let header = StoreHeader {
        version: VERSION,
        n,
        frames: t,
        dim: d,
    };
    let mut out = Vec::with_capacity(header.file_len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, n, t, d] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in store.labels() {
        out.extend_from_slice(&to_u32(l, "label")?.to_le_bytes());
    }
    let payload_start = out.len();
    for &v in store.payload() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Validates magic, version and total length without touching the payload.
pub fn decode_header(bytes: &[u8]) -> Result<StoreHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected T4V1"));
    }
    let header = StoreHeader {
        version: read_u32(bytes, 4),
        n: read_u32(bytes, 8),
        frames: read_u32(bytes, 12),
        dim: read_u32(bytes, 16),
    };
    if header.version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.frames == 0 || header.dim == 0 {
        return Err(Error::format(12, "T and d must be at least 1"));
    }
    let expected = header.file_len();
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("file is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    Ok(header)
}

/// Decodes a complete file. Class names default to `class_0 ..` covering the
/// largest label; use [`FeatureStore::with_class_names`] to attach real ones.
pub fn decode_store(bytes: &[u8]) -> Result<FeatureStore> {
    let header = decode_header(bytes)?;
    let p0 = header.payload_offset();
    let p1 = p0 + header.payload_len();
    let stored_crc = read_u32(bytes, p1);
    let crc = crc32fast::hash(&bytes[p0..p1]);
    if crc != stored_crc {
        return Err(Error::format(
            p1 as u64,
            format!("CRC mismatch: stored {stored_crc:#010x}, computed {crc:#010x}"),
        ));
    }
    let labels: Vec<usize> = (0..header.n as usize)
        .map(|i| read_u32(bytes, HEADER_LEN + 4 * i) as usize)
        .collect();
    let payload: Vec<f64> = bytes[p0..p1]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let names = (0..classes).map(|k| format!("class_{k}")).collect();
    FeatureStore::new(
        header.frames as usize,
        header.dim as usize,
        payload,
        labels,
        Split::Train,
        names,
    )
}

pub fn write_store(path: impl AsRef<Path>, store: &FeatureStore) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_store(store)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}
