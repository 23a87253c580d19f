//! `VGPT` tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VGPT" | ndim: u32 | dims: ndim × u32 | payload: Π dims × f32 (row-major)
//! ```
//!
//! Values are narrowed to `f32` on write. A file read and re-written is
//! byte-identical; an `f64` tensor survives a write/read cycle exactly only
//! when its entries are `f32`-representable (see [`Tensor::randn_f32`]).

use super::Tensor;
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VGPT";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut words = bytes.get(4..).unwrap_or_default().chunks_exact(4);
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(bad("missing VGPT magic"));
    }
    let mut next = || {
        words
            .next()
            .map(|w| u32::from_le_bytes(w.try_into().expect("4 bytes")))
    };
    let ndim = next().ok_or_else(|| bad("truncated header"))? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(next().ok_or_else(|| bad("truncated dims"))? as usize);
    }
    let numel: usize = shape.iter().product();
    let header = 8 + 4 * ndim;
    if bytes.len() != header + 4 * numel {
        return Err(bad(&format!(
            "payload has {} bytes, expected {}",
            bytes.len().saturating_sub(header),
            4 * numel
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|w| f64::from(f32::from_le_bytes(w.try_into().expect("4 bytes"))))
        .collect();
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
