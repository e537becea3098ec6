//! Numeric core for frequency-composed quantization-aware training and
//! test-time adaptation.
//!
//! `no_std` with `alloc`: every routine here is a pure computation over
//! in-memory tensors. File formats, dataset ingestion and the command line
//! live in the `freqcoda` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod data;
mod error;
pub mod nn;
pub mod optim;
pub mod quant;
pub mod rng;
pub mod scalar;
pub mod spectral;
mod tensor;
pub mod train;
pub mod tta;

pub use error::{Error, Result};
pub use nn::{build_resnet, BatchNorm, BatchStats, BnMode, ResNet, ResNetConfig};
pub use scalar::Scalar;
pub use tensor::Tensor;
