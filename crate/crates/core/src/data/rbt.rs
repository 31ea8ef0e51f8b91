//! RBT: a minimal little-endian tensor container.
//!
//! Layout: magic `RBT1`, dtype code (u8: 1 = f32, 2 = f64, 3 = u8), rank (u8),
//! one u64 per dimension, then the row-major payload with no padding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{DType, Scalar, Storable, Tensor};

pub const MAGIC: [u8; 4] = *b"RBT1";

/// A tensor of any storable element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8 { .. } => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8 { shape, .. } => shape,
        }
    }

    /// Converts a float tensor to `T`; `u8` data is rejected.
    pub fn into_float<T: Scalar>(self) -> Result<Tensor<T>> {
        match self {
            AnyTensor::F32(t) => Ok(t.cast()),
            AnyTensor::F64(t) => Ok(t.cast()),
            AnyTensor::U8 { .. } => Err(Error::Format("expected a float tensor, found u8".into())),
        }
    }

    /// Exact conversion: the stored dtype must be `T`'s.
    pub fn into_exact<T: Storable>(self) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::Format(format!(
                "expected {} tensor, found {}",
                T::DTYPE.name(),
                self.dtype().name()
            )));
        }
        self.into_float()
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub fn encode(t: &AnyTensor) -> Vec<u8> {
    let shape = t.shape();
    let dtype = t.dtype();
    let numel: usize = shape.iter().product();
    let mut out = Vec::with_capacity(6 + 8 * shape.len() + numel * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.push(dtype.code());
    out.push(u8::try_from(shape.len()).expect("rank fits in u8"));
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        AnyTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
        AnyTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
        AnyTensor::U8 { data, .. } => out.extend_from_slice(data),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 6 {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().expect("4 bytes")));
        }
        return Err(Error::TruncatedHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let dtype = DType::from_code(bytes[4]).ok_or(Error::BadDType(bytes[4]))?;
    let ndim = bytes[5] as usize;
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(Error::TruncatedHeader);
    }
    let mut shape = Vec::with_capacity(ndim);
    for chunk in bytes[6..header].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[header..];
    let expected = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(&shape, payload.chunks_exact(4).map(f32::read_le).collect())?),
        DType::F64 => AnyTensor::F64(Tensor::new(&shape, payload.chunks_exact(8).map(f64::read_le).collect())?),
        DType::U8 => AnyTensor::U8 {
            shape,
            data: payload.to_vec(),
        },
    })
}

pub fn write_path(path: &Path, t: &AnyTensor) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(Error::io(path))
}

pub fn read_path(path: &Path) -> Result<AnyTensor> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes)
}

/// Writes a float tensor in its own precision.
pub fn rbt_write<T: Storable>(t: &Tensor<T>, path: &Path) -> Result<()>
where
    AnyTensor: From<Tensor<T>>,
{
    write_path(path, &AnyTensor::from(t.clone()))
}

/// Reads a float tensor whose stored dtype must match `T`.
pub fn rbt_read<T: Storable>(path: &Path) -> Result<Tensor<T>> {
    read_path(path)?.into_exact()
}
