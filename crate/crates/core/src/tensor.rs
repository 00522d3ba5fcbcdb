//! RCTF: a minimal dense-tensor container used to hand features to external
//! training code.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `RCTF`                  |
//! | 4            | version (`u32`, = 1)          |
//! | 4            | `ndim` (`u32`)                |
//! | 4 × ndim     | dims (`u32` each)             |
//! | 1            | dtype (`0` = f32, `1` = u8)   |
//! | …            | payload, row-major            |

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RCTF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("missing RCTF magic")]
    BadMagic,
    #[error("unsupported RCTF version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dims {dims:?} do not match {len} elements")]
    ShapeMismatch { dims: Vec<u32>, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U8(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn export_tensor(tensor: &Tensor) -> Vec<u8> {
    let elem = match tensor.data {
        TensorData::F32(_) => 4,
        TensorData::U8(_) => 1,
    };
    let mut out = Vec::with_capacity(13 + 4 * tensor.dims.len() + elem * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for d in &tensor.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(tensor.data.dtype());
    match &tensor.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, TensorError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(TensorError::LengthMismatch {
            expected: at + 4,
            got: bytes.len(),
        })
}

pub fn import_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TensorError::BadMagic);
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    let ndim = read_u32(bytes, 8)? as usize;
    let header = 12 + 4 * ndim + 1;
    if bytes.len() < header {
        return Err(TensorError::LengthMismatch {
            expected: header,
            got: bytes.len(),
        });
    }
    let dims: Vec<u32> = (0..ndim)
        .map(|k| read_u32(bytes, 12 + 4 * k))
        .collect::<Result<_, _>>()?;
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let dtype = bytes[header - 1];
    let elem = match dtype {
        0 => 4,
        1 => 1,
        other => return Err(TensorError::UnknownDtype(other)),
    };
    let payload = &bytes[header..];
    if payload.len() != count * elem {
        return Err(TensorError::LengthMismatch {
            expected: header + count * elem,
            got: bytes.len(),
        });
    }
    let data = if dtype == 0 {
        TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    } else {
        TensorData::U8(payload.to_vec())
    };
    Ok(Tensor { dims, data })
}
