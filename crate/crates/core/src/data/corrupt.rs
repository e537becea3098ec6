//! Procedural corruptions for `C x H x W` images in `[0, 1]`.
//!
//! Every kind maps a severity in `1..=5` to a fixed parameter row; the rows
//! follow the magnitudes of the public CIFAR-10-C generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::Dataset;
use crate::error::{bail, Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(try_from = "String", into = "String"))]
pub enum CorruptionKind {
    Identity,
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    Contrast,
    Brightness,
    Pixelate,
}

const GAUSSIAN_SIGMA: [f64; 5] = [0.08, 0.12, 0.18, 0.26, 0.38];
const SHOT_RATE: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
const IMPULSE_AMOUNT: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];
/// (disk radius, anti-alias sigma)
const DEFOCUS: [(f64, f64); 5] = [(0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (1.0, 0.2), (1.5, 0.1)];
const CONTRAST: [f64; 5] = [0.75, 0.5, 0.4, 0.3, 0.15];
const BRIGHTNESS: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.3];
const PIXELATE: [f64; 5] = [0.95, 0.9, 0.85, 0.75, 0.65];

impl CorruptionKind {
    /// The seven shift kinds, without the identity.
    pub const SHIFTS: [CorruptionKind; 7] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Identity => "identity",
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }

    /// Parameter row for `severity` (1..=5).
    pub fn parameters(self, severity: u8) -> Result<Vec<f64>> {
        if !(1..=5).contains(&severity) {
            bail!(InvalidArgument, "severity must be in 1..=5, got {}", severity);
        }
        let i = severity as usize - 1;
        Ok(match self {
            CorruptionKind::Identity => Vec::new(),
            CorruptionKind::GaussianNoise => vec![GAUSSIAN_SIGMA[i]],
            CorruptionKind::ShotNoise => vec![SHOT_RATE[i]],
            CorruptionKind::ImpulseNoise => vec![IMPULSE_AMOUNT[i]],
            CorruptionKind::DefocusBlur => vec![DEFOCUS[i].0, DEFOCUS[i].1],
            CorruptionKind::Contrast => vec![CONTRAST[i]],
            CorruptionKind::Brightness => vec![BRIGHTNESS[i]],
            CorruptionKind::Pixelate => vec![PIXELATE[i]],
        })
    }

    fn arity(self) -> usize {
        match self {
            CorruptionKind::Identity => 0,
            CorruptionKind::DefocusBlur => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "clean" || s == "identity" {
            return Ok(CorruptionKind::Identity);
        }
        CorruptionKind::SHIFTS
            .into_iter()
            .find(|k| k.name() == s || k.name().split('_').next() == Some(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind '{s}'")))
    }
}

impl TryFrom<String> for CorruptionKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CorruptionKind> for String {
    fn from(v: CorruptionKind) -> String {
        String::from(v.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        kind.parameters(severity)?;
        Ok(CorruptionSpec { kind, severity, seed })
    }

    /// `"<kind>-<severity>"`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.kind, self.severity)
    }
}

/// Apply `spec` to one `C x H x W` image.
pub fn corrupt(image: &Tensor<f32>, spec: &CorruptionSpec) -> Result<Tensor<f32>> {
    let params = spec.kind.parameters(spec.severity)?;
    corrupt_with(image, spec.kind, &params, spec.seed)
}

/// Apply `kind` with an explicit parameter row (see [`CorruptionKind::parameters`]).
pub fn corrupt_with(image: &Tensor<f32>, kind: CorruptionKind, params: &[f64], seed: u64) -> Result<Tensor<f32>> {
    let (c, h, w) = match *image.dims() {
        [c, h, w] => (c, h, w),
        _ => bail!(InvalidShape, "expected C x H x W, got {:?}", image.dims()),
    };
    if params.len() != kind.arity() {
        bail!(
            InvalidArgument,
            "{} takes {} parameters, got {}",
            kind,
            kind.arity(),
            params.len()
        );
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(InvalidData, "pixel values must lie in [0, 1]");
    }
    let mut rng = rng::stream(seed, kind.tag());
    let x = image.data();
    let out: Vec<f32> = match kind {
        CorruptionKind::Identity => x.to_vec(),
        CorruptionKind::GaussianNoise => {
            let sigma = params[0];
            x.iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (v as f64 + sigma * z) as f32
                })
                .collect()
        }
        CorruptionKind::ShotNoise => {
            let rate = params[0];
            if !(rate > 0.0) {
                bail!(InvalidArgument, "shot noise rate must be > 0");
            }
            x.iter()
                .map(|&v| {
                    let lambda = v as f64 * rate;
                    let k = if lambda > 0.0 {
                        Poisson::new(lambda)
                            .map_err(|e| Error::InvalidArgument(format!("poisson rate {lambda}: {e}")))?
                            .sample(&mut rng)
                    } else {
                        0.0
                    };
                    Ok((k / rate) as f32)
                })
                .collect::<Result<_>>()?
        }
        CorruptionKind::ImpulseNoise => {
            let amount = params[0];
            x.iter()
                .map(|&v| {
                    if rng.random::<f64>() < amount {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        v
                    }
                })
                .collect()
        }
        CorruptionKind::DefocusBlur => {
            let kernel = defocus_kernel(params[0], params[1])?;
            let mut out = Vec::with_capacity(x.len());
            for plane in x.chunks_exact(h * w) {
                out.extend(convolve_reflect(plane, h, w, &kernel));
            }
            out
        }
        CorruptionKind::Contrast => {
            let k = params[0] as f32;
            let mut out = Vec::with_capacity(x.len());
            for plane in x.chunks_exact(h * w) {
                let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
                let mean = mean as f32;
                out.extend(plane.iter().map(|&v| (v - mean) * k + mean));
            }
            out
        }
        CorruptionKind::Brightness => brighten(x, c, h * w, params[0] as f32),
        CorruptionKind::Pixelate => {
            let f = params[0];
            if !(f > 0.0 && f <= 1.0) {
                bail!(InvalidArgument, "pixelate factor must lie in (0, 1], got {}", f);
            }
            let mut out = Vec::with_capacity(x.len());
            for plane in x.chunks_exact(h * w) {
                out.extend(pixelate(plane, h, w, f));
            }
            out
        }
    };
    let out = out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::from_vec(image.dims(), out)
}

/// Corrupt every image; image `i` uses seed `spec.seed ^ i`.
pub fn corrupt_dataset(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    let params = spec.kind.parameters(spec.severity)?;
    let (c, h, w) = dataset.image_dims();
    let mut images = Vec::with_capacity(dataset.images.len());
    for i in 0..dataset.len() {
        let img = Tensor::from_vec(&[c, h, w], dataset.images.sample(i).to_vec())?;
        images.extend_from_slice(corrupt_with(&img, spec.kind, &params, spec.seed ^ i as u64)?.data());
    }
    Ok(Dataset {
        name: format!("{}/{}", dataset.name, spec.label()),
        images: Tensor::from_vec(dataset.images.dims(), images)?,
        labels: dataset.labels.clone(),
        num_classes: dataset.num_classes,
    })
}

/// Disk of `radius` on the integer grid, smoothed by a 3 x 3 Gaussian.
fn defocus_kernel(radius: f64, alias_sigma: f64) -> Result<(usize, Vec<f64>)> {
    if !(radius >= 0.0) || !(alias_sigma > 0.0) {
        bail!(InvalidArgument, "defocus needs radius >= 0 and sigma > 0");
    }
    let r = libm::ceil(radius) as isize;
    let dsize = (2 * r + 1) as usize;
    let mut disk = vec![0.0; dsize * dsize];
    for y in -r..=r {
        for x in -r..=r {
            if ((x * x + y * y) as f64) <= radius * radius {
                disk[((y + r) as usize) * dsize + (x + r) as usize] = 1.0;
            }
        }
    }
    let gauss: Vec<f64> = (-1..=1)
        .flat_map(|y: i32| {
            (-1..=1).map(move |x: i32| libm::exp(-((x * x + y * y) as f64) / (2.0 * alias_sigma * alias_sigma)))
        })
        .collect();
    let size = dsize + 2;
    let mut k = vec![0.0; size * size];
    for dy in 0..dsize {
        for dx in 0..dsize {
            let d = disk[dy * dsize + dx];
            if d == 0.0 {
                continue;
            }
            for gy in 0..3 {
                for gx in 0..3 {
                    k[(dy + gy) * size + dx + gx] += d * gauss[gy * 3 + gx];
                }
            }
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok((size, k))
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

fn convolve_reflect(plane: &[f32], h: usize, w: usize, kernel: &(usize, Vec<f64>)) -> Vec<f32> {
    let (size, k) = kernel;
    let half = (*size / 2) as isize;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..*size as isize {
                let sy = reflect(y + ky - half, h);
                for kx in 0..*size as isize {
                    let sx = reflect(x + kx - half, w);
                    acc += k[(ky as usize) * size + kx as usize] * plane[sy * w + sx] as f64;
                }
            }
            out.push(acc as f32);
        }
    }
    out
}

/// Raise HSV value by `delta`, keeping hue and saturation.
fn brighten(x: &[f32], c: usize, plane: usize, delta: f32) -> Vec<f32> {
    if c != 3 {
        return x.iter().map(|&v| v + delta).collect();
    }
    let mut out = x.to_vec();
    for img in out.chunks_exact_mut(3 * plane) {
        for p in 0..plane {
            let (r, g, b) = (img[p], img[plane + p], img[2 * plane + p]);
            let v = r.max(g).max(b);
            let v2 = (v + delta).clamp(0.0, 1.0);
            for ch in 0..3 {
                img[ch * plane + p] = if v > 0.0 { img[ch * plane + p] * v2 / v } else { v2 };
            }
        }
    }
    out
}

/// Box-downsample to `round(f * size)` cells, then nearest-upsample back.
fn pixelate(plane: &[f32], h: usize, w: usize, f: f64) -> Vec<f32> {
    let mh = (libm::round(f * h as f64) as usize).clamp(1, h);
    let mw = (libm::round(f * w as f64) as usize).clamp(1, w);
    let cell_y = |y: usize| y * mh / h;
    let cell_x = |x: usize| x * mw / w;
    let mut sums = vec![0.0f64; mh * mw];
    let mut counts = vec![0usize; mh * mw];
    for y in 0..h {
        for x in 0..w {
            let k = cell_y(y) * mw + cell_x(x);
            sums[k] += plane[y * w + x] as f64;
            counts[k] += 1;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let k = cell_y(y) * mw + cell_x(x);
            out.push((sums[k] / counts[k] as f64) as f32);
        }
    }
    out
}
