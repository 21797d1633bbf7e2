//! Tensor files: a one-line JSON header `{"dims":[..],"dtype":"f32"}`, a
//! newline, then the raw little-endian payload in row-major order. Feature
//! maps use dims `[C, H, W]` in `(c, y, x)` order; weight files may have any
//! rank. `f64` payloads are read and written as well.

use std::fs;
use std::path::Path;

use gip_core::PlainTensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: Vec<usize>,
    dtype: Dtype,
}

/// Values plus dimensions, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn from_plain(t: &PlainTensor) -> Self {
        RawTensor {
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        RawTensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn into_plain(self) -> gip_core::Result<PlainTensor> {
        match self.dims[..] {
            [c, h, w] => PlainTensor::from_vec(c, h, w, self.data),
            _ => Err(gip_core::Error::ShapeMismatch(format!(
                "feature map needs dims [C, H, W], got {:?}",
                self.dims
            ))),
        }
    }
}

pub fn encode(t: &RawTensor, dtype: Dtype) -> Vec<u8> {
    let header = serde_json::to_string(&Header {
        dims: t.dims.clone(),
        dtype,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(header.len() + 1 + t.data.len() * dtype.width());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for v in &t.data {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Parses a tensor file; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<RawTensor> {
    let bad = |detail: String| CliError::schema(origin, detail);
    let end = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..end])
        .map_err(|e| bad(format!("tensor header: {e}")))?;
    let count = header
        .dims
        .iter()
        .try_fold(1usize, |n, d| n.checked_mul(*d))
        .ok_or_else(|| bad("tensor dims overflow".into()))?;
    let payload = &bytes[end + 1..];
    let width = header.dtype.width();
    if payload.len() != count * width {
        return Err(bad(format!(
            "payload has {} bytes, dims {:?} need {}",
            payload.len(),
            header.dims,
            count * width
        )));
    }
    let data = payload
        .chunks_exact(width)
        .map(|b| match header.dtype {
            Dtype::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
        .collect();
    Ok(RawTensor {
        dims: header.dims,
        data,
    })
}

pub fn read_tensor(path: &Path) -> Result<RawTensor> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_tensor(path: &Path, t: &RawTensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode(t, dtype)).map_err(|e| CliError::io(path, e))
}

pub fn read_feature_map(path: &Path) -> Result<PlainTensor> {
    Ok(read_tensor(path)?.into_plain()?)
}
