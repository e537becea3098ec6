use alloc::string::String;
use alloc::vec::Vec;

use super::Dataset;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// One label byte followed by 3 x 32 x 32 channel-planar pixels.
pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Parse a CIFAR-10 binary batch. Pixels are scaled by `1/255`.
pub fn parse_records(bytes: &[u8], name: impl Into<String>) -> Result<Dataset> {
    let name = name.into();
    if bytes.len() % RECORD_BYTES != 0 {
        bail!(
            InvalidData,
            "{}: length {} is not a multiple of {}",
            name,
            bytes.len(),
            RECORD_BYTES
        );
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            bail!(InvalidData, "{}: record {} has label {}", name, i, rec[0]);
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::from_vec(&[n, 3, 32, 32], pixels)?;
    Dataset::new(name, images, labels, 10)
}
