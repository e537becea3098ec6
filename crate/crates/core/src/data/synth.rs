//! Procedural shape images for runs that cannot download data.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{bail, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Class `k` draws `SHAPES[k]`.
pub const SHAPES: [&str; 10] = [
    "disk", "square", "stripes", "checker", "ring", "cross", "triangle", "diamond", "bar", "dots",
];

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Square image side.
    pub size: usize,
    /// Std of the additive pixel noise.
    pub noise: f64,
    /// Amplitude of a class-independent fine grating (period 2 to 4 px).
    pub texture: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            size: 32,
            noise: 0.03,
            texture: 0.0,
        }
    }
}

fn inside(shape: usize, px: f64, py: f64) -> bool {
    let (ax, ay) = (px.abs(), py.abs());
    let in_box = ax <= 1.0 && ay <= 1.0;
    let r = libm::sqrt(px * px + py * py);
    match shape {
        0 => r <= 1.0,
        1 => ax <= 0.85 && ay <= 0.85,
        2 => in_box && (libm::floor((py + 1.0) * 2.0) as i64) % 2 == 0,
        3 => in_box && (libm::floor((px + 1.0) * 1.5) as i64 + libm::floor((py + 1.0) * 1.5) as i64) % 2 == 0,
        4 => (0.55..=1.0).contains(&r),
        5 => in_box && (ax <= 0.3 || ay <= 0.3),
        6 => (-0.9..=0.9).contains(&py) && ax <= (py + 0.9) / 1.8,
        7 => ax + ay <= 1.0,
        8 => ax <= 1.0 && ay <= 0.35,
        _ => {
            let (dx, dy) = (ax - 0.5, ay - 0.5);
            libm::sqrt(dx * dx + dy * dy) <= 0.38
        }
    }
}

/// `n` balanced images (`label = i mod num_classes`) of `3 x 32 x 32`.
pub fn synth_dataset(seed: u64, n: usize, num_classes: usize) -> Result<Dataset> {
    synth_dataset_with(
        seed,
        n,
        &SynthConfig {
            num_classes,
            ..SynthConfig::default()
        },
    )
}

pub fn synth_dataset_with(seed: u64, n: usize, cfg: &SynthConfig) -> Result<Dataset> {
    let c = cfg.num_classes;
    if !(2..=SHAPES.len()).contains(&c) {
        bail!(InvalidArgument, "synthetic data supports 2..={} classes, got {}", SHAPES.len(), c);
    }
    if n < c {
        bail!(InvalidArgument, "need n >= num_classes, got n = {}, classes = {}", n, c);
    }
    if cfg.size < 8 || !(cfg.noise >= 0.0) || !(cfg.texture >= 0.0) {
        bail!(InvalidArgument, "synthetic config out of range: {:?}", cfg);
    }
    let size = cfg.size;
    let plane = size * size;
    let s = size as f64;
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).expect("finite std");
    let mut pixels = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % c;
        let mut rng = rng::stream(seed, i as u64);
        let scale = s * rng.random_range(0.22..0.36);
        let cx = s / 2.0 + s * rng.random_range(-0.15..0.15);
        let cy = s / 2.0 + s * rng.random_range(-0.15..0.15);
        let dark_bg = rng.random::<bool>();
        let mut bg = [0.0f64; 3];
        let mut fg = [0.0f64; 3];
        for ch in 0..3 {
            let lo = rng.random_range(0.0..0.4);
            let hi = rng.random_range(0.6..1.0);
            (bg[ch], fg[ch]) = if dark_bg { (lo, hi) } else { (hi, lo) };
        }
        let period = rng.random_range(2.0..4.0);
        let angle = rng.random_range(0.0..core::f64::consts::PI);
        let phase = rng.random_range(0.0..core::f64::consts::TAU);
        let (ux, uy) = (libm::cos(angle), libm::sin(angle));
        let mut img = Vec::with_capacity(3 * plane);
        for ch in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    // 2 x 2 supersampled coverage
                    let mut cover = 0.0;
                    for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                        let px = (x as f64 + ox - cx) / scale;
                        let py = (y as f64 + oy - cy) / scale;
                        if inside(label, px, py) {
                            cover += 0.25;
                        }
                    }
                    let mut v = bg[ch] * (1.0 - cover) + fg[ch] * cover;
                    if cfg.texture > 0.0 {
                        let t = (x as f64 * ux + y as f64 * uy) * core::f64::consts::TAU / period + phase;
                        v += cfg.texture * libm::sin(t);
                    }
                    if cfg.noise > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    img.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        pixels.extend(img);
        labels.push(label);
    }
    let images = Tensor::from_vec(&[n, 3, size, size], pixels)?;
    Dataset::new(format!("synthetic-{c}"), images, labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_dataset(7, 40, 4).unwrap();
        let b = synth_dataset(7, 40, 4).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == k).count(), 10);
        }
        assert_ne!(a, synth_dataset(8, 40, 4).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_dataset(0, 3, 4).is_err());
        assert!(synth_dataset(0, 30, 11).is_err());
    }

    #[test]
    fn every_shape_covers_some_pixels() {
        for shape in 0..SHAPES.len() {
            let mut hits = 0;
            for y in -20..=20 {
                for x in -20..=20 {
                    if inside(shape, x as f64 / 20.0, y as f64 / 20.0) {
                        hits += 1;
                    }
                }
            }
            assert!(hits > 100, "{} covers {}", SHAPES[shape], hits);
        }
    }
}
