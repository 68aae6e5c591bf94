//! Binary tensor file format.
//!
//! Layout: magic bytes `FTNSR1` (6 bytes), `u32` little-endian ndim (always
//! 4), four `u32` little-endian dims, then the row-major `f32`
//! little-endian payload. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{Result, Tensor, TensorError};

const MAGIC: &[u8; 6] = b"FTNSR1";

/// Writes `t` to `path` in the FTNSR1 format.
pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(6 + 4 + 16 + 4 * t.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&4u32.to_le_bytes());
    for dim in t.shape() {
        let dim = u32::try_from(dim).map_err(|_| TensorError::DimOverflow {
            dims: [0; 4],
        })?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads an FTNSR1 file back into a tensor.
pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(TensorError::BadMagic { got: bytes.get(..6).unwrap_or(&bytes).to_vec() });
    }
    let header_len = 6 + 4 + 16;
    if bytes.len() < header_len {
        return Err(TensorError::PayloadSize { dims: [0; 4], expected: header_len, got: bytes.len() });
    }
    let ndim = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if ndim != 4 {
        return Err(TensorError::BadNdim { got: ndim });
    }
    let mut dims = [0u32; 4];
    for (i, dim) in dims.iter_mut().enumerate() {
        let off = 10 + 4 * i;
        *dim = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or(TensorError::DimOverflow { dims })?;
    let expected = count.checked_mul(4).ok_or(TensorError::DimOverflow { dims })?;
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(TensorError::PayloadSize { dims, expected, got: payload.len() });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(dims.map(|d| d as usize), data)
}
