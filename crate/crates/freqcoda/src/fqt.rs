//! `FQT0` tensor files: magic, u32 rank, u32 dims, then f32 values, all
//! little-endian.

use std::fs;
use std::path::Path;

use freqcoda_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FQT0";

pub fn encode(tensor: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Data("not an FQT0 tensor (bad magic)".into()));
    }
    let rank = u32_at(bytes, 4).ok_or_else(|| Error::Data("FQT0 header truncated".into()))? as usize;
    if rank > 8 {
        return Err(Error::Data(format!("FQT0 rank {rank} is out of range")));
    }
    let dims = (0..rank)
        .map(|i| u32_at(bytes, 8 + 4 * i).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Data("FQT0 header truncated".into()))?;
    let start = 8 + 4 * rank;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Data("FQT0 dims overflow".into()))?;
    let payload = &bytes[start..];
    if payload.len() != count * 4 {
        return Err(Error::Data(format!(
            "FQT0 payload holds {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::from_vec(&dims, data)?)
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}
