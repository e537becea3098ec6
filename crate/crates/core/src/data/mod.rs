//! Datasets, the procedural synthetic generator, CIFAR-10 record parsing,
//! channel normalization and procedural corruptions.

mod cifar;
mod corrupt;
mod synth;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub use cifar::{parse_records, RECORD_BYTES};
pub use corrupt::{corrupt, corrupt_dataset, corrupt_with, CorruptionKind, CorruptionSpec};
pub use synth::{synth_dataset, synth_dataset_with, SynthConfig, SHAPES};

/// Per-channel statistics of the CIFAR-10 training set.
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// Labelled images with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `N x C x H x W`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, _, _, _) = images.nchw()?;
        if n != labels.len() {
            bail!(InvalidData, "{} images but {} labels", n, labels.len());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            bail!(InvalidData, "label {} outside [0, {})", bad, num_classes);
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!(InvalidData, "pixel values must lie in [0, 1]");
        }
        Ok(Dataset {
            name: name.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let d = self.images.dims();
        (d[1], d[2], d[3])
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The first `per_class` images of every class, in dataset order.
    pub fn balanced_prefix(&self, per_class: usize) -> Dataset {
        let mut taken = alloc::vec![0usize; self.num_classes];
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.labels[i];
                taken[l] += 1;
                taken[l] <= per_class
            })
            .collect();
        self.subset(&indices)
    }
}

fn check_channel_params(mean: &[f32], std: &[f32], channels: usize) -> Result<()> {
    if mean.len() != channels || std.len() != channels {
        bail!(
            InvalidArgument,
            "need {} channel means and stds, got {} and {}",
            channels,
            mean.len(),
            std.len()
        );
    }
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        bail!(InvalidArgument, "std must be positive, got {}", s);
    }
    Ok(())
}

fn per_channel(images: &Tensor<f32>, mean: &[f32], std: &[f32], f: impl Fn(f32, f32, f32) -> f32) -> Result<Tensor<f32>> {
    let (_, c, h, w) = images.nchw()?;
    check_channel_params(mean, std, c)?;
    let plane = h * w;
    let mut out = images.clone();
    for (k, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let ch = k % c;
        for v in chunk {
            *v = f(*v, mean[ch], std[ch]);
        }
    }
    Ok(out)
}

/// Per-channel affine normalization applied after filtering and corruption.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelNorm {
    pub fn cifar10() -> Self {
        ChannelNorm {
            mean: CIFAR10_MEAN.to_vec(),
            std: CIFAR10_STD.to_vec(),
        }
    }

    pub fn identity(channels: usize) -> Self {
        ChannelNorm {
            mean: alloc::vec![0.0; channels],
            std: alloc::vec![1.0; channels],
        }
    }

    pub fn apply(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        normalize(images, &self.mean, &self.std)
    }

    pub fn invert(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        denormalize(images, &self.mean, &self.std)
    }
}

impl Default for ChannelNorm {
    fn default() -> Self {
        ChannelNorm::cifar10()
    }
}

/// `(x - mean) / std` per channel of an `N x C x H x W` tensor.
pub fn normalize(images: &Tensor<f32>, mean: &[f32], std: &[f32]) -> Result<Tensor<f32>> {
    per_channel(images, mean, std, |x, m, s| (x - m) / s)
}

pub fn denormalize(images: &Tensor<f32>, mean: &[f32], std: &[f32]) -> Result<Tensor<f32>> {
    per_channel(images, mean, std, |x, m, s| x * s + m)
}
