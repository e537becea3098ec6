//! Inter-domain spectral distance matrices and BN mean drift.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{corrupt, CorruptionSpec, Dataset};
use crate::error::{bail, Error, Result};
use crate::nn::{BatchStats, ResNet};
use crate::scalar::Scalar;
use crate::spectral::{dft2, FrequencyMask};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "kebab-case")
)]
pub enum Band {
    Low,
    High,
}

impl Band {
    pub fn name(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::High => "high",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" | "lfc" => Ok(Band::Low),
            "high" | "hfc" => Ok(Band::High),
            _ => Err(Error::InvalidArgument(format!("unknown band '{s}'"))),
        }
    }
}

/// Symmetric `K x K` cosine distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    /// Row-major `K x K`.
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.size();
        if k < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    sum += self.get(i, j);
                }
            }
        }
        sum / (k * (k - 1)) as f64
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.size();
        (0..k).all(|i| self.get(i, i) == 0.0 && (0..k).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Overall matrix plus the per-class means it averages.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceAnalysis {
    pub overall: DistanceMatrix,
    /// `(class, matrix)` for every class that contributed images.
    pub per_class: Vec<(usize, DistanceMatrix)>,
}

/// `1 - cos(a, b)` in `[0, 2]`; identical vectors give exactly 0.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Flattened magnitude spectrum of a `C x H x W` image restricted to `band`.
pub fn band_magnitudes(image: &Tensor<f32>, mask: &FrequencyMask, band: Band) -> Result<Vec<f64>> {
    let (h, w) = (mask.height, mask.width);
    let keep = match band {
        Band::Low => &mask.low,
        Band::High => &mask.high,
    };
    let mut out = Vec::new();
    for plane in image.data().chunks_exact(h * w) {
        let mags = dft2(plane, h, w)?.magnitudes();
        out.extend(mags.iter().zip(keep).filter(|(_, &k)| k).map(|(&m, _)| m));
    }
    Ok(out)
}

fn symmetric_from(labels: &[String], mut f: impl FnMut(usize, usize) -> f64) -> DistanceMatrix {
    let k = labels.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = f(i, j);
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    DistanceMatrix {
        labels: labels.to_vec(),
        values,
    }
}

/// For the first `samples_per_class` images of every class: build each
/// corrupted variant, take band-masked magnitude spectra, and measure
/// pairwise cosine distances. Image matrices are averaged per class, class
/// matrices then averaged into the overall matrix.
pub fn frequency_distance_matrix(
    base: &Dataset,
    corruptions: &[CorruptionSpec],
    radius: f64,
    band: Band,
    samples_per_class: usize,
) -> Result<DistanceAnalysis> {
    if corruptions.is_empty() {
        bail!(InvalidArgument, "corruption list is empty");
    }
    if samples_per_class == 0 {
        bail!(InvalidArgument, "samples per class must be >= 1");
    }
    let (c, h, w) = base.image_dims();
    let mask = FrequencyMask::new(h, w, radius)?;
    let labels: Vec<String> = corruptions.iter().map(CorruptionSpec::label).collect();
    let k = corruptions.len();
    let mut class_sums = vec![(vec![0.0f64; k * k], 0usize); base.num_classes];
    for i in 0..base.len() {
        let class = base.labels[i];
        let (_, count) = &class_sums[class];
        if *count >= samples_per_class {
            continue;
        }
        let image = Tensor::from_vec(&[c, h, w], base.images.sample(i).to_vec())?;
        let features = corruptions
            .iter()
            .map(|spec| {
                let variant = corrupt(&image, &CorruptionSpec { seed: spec.seed ^ i as u64, ..*spec })?;
                band_magnitudes(&variant, &mask, band)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = symmetric_from(&labels, |a, b| cosine_distance(&features[a], &features[b]));
        let (sum, count) = &mut class_sums[class];
        for (s, v) in sum.iter_mut().zip(&m.values) {
            *s += v;
        }
        *count += 1;
    }
    let per_class: Vec<(usize, DistanceMatrix)> = class_sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(class, (sum, n))| {
            let matrix = symmetric_from(&labels, |a, b| sum[a * k + b] / n as f64);
            (class, matrix)
        })
        .collect();
    if per_class.is_empty() {
        bail!(InvalidArgument, "dataset has no images");
    }
    let overall = symmetric_from(&labels, |a, b| {
        per_class.iter().map(|(_, m)| m.get(a, b)).sum::<f64>() / per_class.len() as f64
    });
    Ok(DistanceAnalysis { overall, per_class })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SseReport {
    pub per_layer: Vec<f64>,
    pub total: f64,
}

/// Per layer `sum_c (mu_s,c - mu_t,c)^2` and their total.
pub fn bn_sse<T: Scalar>(source: &[BatchStats<T>], adapted: &[BatchStats<T>]) -> Result<SseReport> {
    if source.len() != adapted.len() {
        bail!(
            InvalidArgument,
            "{} source layers vs {} adapted layers",
            source.len(),
            adapted.len()
        );
    }
    let mut per_layer = Vec::with_capacity(source.len());
    for (l, (s, t)) in source.iter().zip(adapted).enumerate() {
        if s.mean.len() != t.mean.len() {
            bail!(
                InvalidArgument,
                "layer {}: {} vs {} channels",
                l,
                s.mean.len(),
                t.mean.len()
            );
        }
        per_layer.push(
            s.mean
                .iter()
                .zip(&t.mean)
                .map(|(a, b)| {
                    let d = a.as_f64() - b.as_f64();
                    d * d
                })
                .sum(),
        );
    }
    let total = per_layer.iter().sum();
    Ok(SseReport { per_layer, total })
}

/// Source running statistics of every BN layer, in model order.
pub fn source_stats<T: Scalar>(model: &ResNet<T>) -> Vec<BatchStats<T>> {
    model.batchnorms().iter().map(|bn| bn.source_stats()).collect()
}

/// Each BN layer's current adapted mean estimate (variance left at source).
pub fn adapted_stats<T: Scalar>(model: &ResNet<T>) -> Vec<BatchStats<T>> {
    model
        .batchnorms()
        .iter()
        .map(|bn| BatchStats {
            mean: bn.adapted_mean(),
            var: bn.running_var.clone(),
        })
        .collect()
}
