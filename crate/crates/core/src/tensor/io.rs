//! The `MAGR` tensor container.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! "MAGR"            4 bytes magic
//! version  u32      currently 1
//! dtype    u8       0 = f32, 1 = f64
//! ndim     u8       1 or 2
//! dims     u64 × ndim
//! payload           row-major, prod(dims) elements of dtype
//! ```
//!
//! Values are always widened to `f64` in memory. A 1-D tensor of length
//! `k` maps to a `k × 1` column matrix.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::DenseMatrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MAGR";
pub const VERSION: u32 = 1;

const FIXED_HEADER: usize = 4 + 4 + 1 + 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:02x?}, expected \"MAGR\"")]
    BadMagic([u8; 4]),
    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported rank {0}, expected 1 or 2")]
    UnsupportedRank(u8),
    #[error("dimensions {0:?} overflow")]
    DimsOverflow(Vec<u64>),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("payload of {actual} bytes does not match dimensions ({expected} bytes)")]
    DimsMismatch { expected: usize, actual: usize },
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A decoded container: the storage dtype and rank are kept so that
/// re-encoding reproduces the original bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &DenseMatrix, dtype: DType) -> Self {
        Tensor {
            dtype,
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn vector(values: &[f64], dtype: DType) -> Self {
        Tensor {
            dtype,
            dims: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        let (rows, cols) = match self.dims.as_slice() {
            [k] => (*k, 1),
            [r, c] => (*r, *c),
            _ => unreachable!("rank is validated on decode"),
        };
        DenseMatrix::new(rows, cols, self.data.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            FIXED_HEADER + 8 * self.dims.len() + self.dtype.size() * self.data.len(),
        );
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.tag());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self.dtype {
            DType::F32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                for &v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::TruncatedHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        if bytes.len() < FIXED_HEADER {
            return Err(FormatError::TruncatedHeader(bytes.len()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dtype = DType::from_tag(bytes[8]).ok_or(FormatError::UnsupportedDtype(bytes[8]))?;
        let ndim = bytes[9];
        if !(1..=2).contains(&ndim) {
            return Err(FormatError::UnsupportedRank(ndim));
        }
        let header = FIXED_HEADER + 8 * ndim as usize;
        if bytes.len() < header {
            return Err(FormatError::TruncatedHeader(bytes.len()));
        }
        let raw_dims: Vec<u64> = bytes[FIXED_HEADER..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let overflow = || FormatError::DimsOverflow(raw_dims.clone());
        let mut count: usize = 1;
        let mut dims = Vec::with_capacity(raw_dims.len());
        for &d in &raw_dims {
            let d = usize::try_from(d).map_err(|_| overflow())?;
            count = count.checked_mul(d).ok_or_else(overflow)?;
            dims.push(d);
        }
        let expected = count.checked_mul(dtype.size()).ok_or_else(overflow)?;
        let payload = &bytes[header..];
        if payload.len() < expected {
            return Err(FormatError::TruncatedPayload {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(FormatError::DimsMismatch {
                expected,
                actual: payload.len(),
            });
        }
        let data: Vec<f64> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
        Ok(Tensor { dtype, dims, data })
    }
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

/// Reads a 1-D or 2-D tensor file as a matrix.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_tensor_file(path)?.to_matrix()
}

/// Writes a matrix as a 2-D `f64` tensor.
pub fn write_tensor(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_tensor_file(path, &Tensor::from_matrix(m, DType::F64))
}
