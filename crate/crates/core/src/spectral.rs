//! 2D Fourier transforms and radius-masked band splitting.
//!
//! Spectra handed to callers use the DC-centered layout: bin `(⌊h/2⌋, ⌊w/2⌋)`
//! is the zero frequency. Internally transforms run in the natural (unshifted)
//! layout with the mask permuted to match, so no shift copy sits on the hot
//! path. Transforms are computed in `f64` regardless of the caller's element
//! type.
//!
//! Forward transforms are unnormalized; the inverse carries `1/(h*w)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Largest tolerated imaginary residue after an inverse transform, relative
/// to `max(1, max|x|)`.
pub const IMAG_RESIDUE_TOL: f64 = 1e-6;

/// DC-centered 2D spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn dc(&self) -> Complex64 {
        self.bins[(self.height / 2) * self.width + self.width / 2]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// One-dimensional transform plan.
#[derive(Clone, Debug)]
struct Fft1d {
    n: usize,
    /// `exp(-2πi k / n)` for `k in 0..n`.
    roots: Vec<Complex64>,
    /// Bit-reversal permutation; empty unless `n` is a power of two.
    rev: Vec<usize>,
}

impl Fft1d {
    fn new(n: usize) -> Self {
        let roots = (0..n)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(theta), libm::sin(theta))
            })
            .collect();
        let rev = if n.is_power_of_two() && n > 1 {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect()
        } else {
            Vec::new()
        };
        Fft1d { n, roots, rev }
    }

    #[inline]
    fn root(&self, k: usize, inverse: bool) -> Complex64 {
        let r = self.roots[k];
        if inverse {
            r.conj()
        } else {
            r
        }
    }

    /// Unnormalized in-place transform of `buf`; `scratch` must hold `n`.
    fn run(&self, buf: &mut [Complex64], scratch: &mut [Complex64], inverse: bool) {
        let n = self.n;
        if n == 1 {
            return;
        }
        if !self.rev.is_empty() {
            for i in 0..n {
                let j = self.rev[i];
                if i < j {
                    buf.swap(i, j);
                }
            }
            let mut len = 2;
            while len <= n {
                let half = len / 2;
                let step = n / len;
                for start in (0..n).step_by(len) {
                    for k in 0..half {
                        let w = self.root(k * step, inverse);
                        let u = buf[start + k];
                        let v = buf[start + k + half] * w;
                        buf[start + k] = u + v;
                        buf[start + k + half] = u - v;
                    }
                }
                len <<= 1;
            }
        } else {
            for (k, out) in scratch.iter_mut().enumerate().take(n) {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &x) in buf.iter().enumerate() {
                    acc += x * self.root((j * k) % n, inverse);
                }
                *out = acc;
            }
            buf.copy_from_slice(&scratch[..n]);
        }
    }
}

/// Cached row/column plans for one `h x w` grid size.
#[derive(Clone, Debug)]
pub struct Plan2d {
    height: usize,
    width: usize,
    rows: Fft1d,
    cols: Fft1d,
}

impl Plan2d {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            bail!(InvalidShape, "zero-sized grid {}x{}", height, width);
        }
        Ok(Plan2d {
            height,
            width,
            rows: Fft1d::new(width),
            cols: Fft1d::new(height),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Unnormalized forward (or unnormalized inverse) transform in natural layout.
    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let mut scratch = vec![Complex64::new(0.0, 0.0); h.max(w)];
        for row in buf.chunks_exact_mut(w) {
            self.rows.run(row, &mut scratch, inverse);
        }
        if h > 1 {
            let mut column = vec![Complex64::new(0.0, 0.0); h];
            for j in 0..w {
                for i in 0..h {
                    column[i] = buf[i * w + j];
                }
                self.cols.run(&mut column, &mut scratch, inverse);
                for i in 0..h {
                    buf[i * w + j] = column[i];
                }
            }
        }
    }

    pub fn forward_natural<T: Scalar>(&self, grid: &[T]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = grid
            .iter()
            .map(|v| Complex64::new(v.as_f64(), 0.0))
            .collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Normalized inverse in natural layout.
    pub fn inverse_natural(&self, mut bins: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut bins, true);
        let scale = 1.0 / (self.height * self.width) as f64;
        for b in bins.iter_mut() {
            *b *= scale;
        }
        bins
    }
}

#[inline]
fn shifted_to_natural(i: usize, n: usize) -> usize {
    (i + n - n / 2) % n
}

#[inline]
fn natural_to_shifted(u: usize, n: usize) -> usize {
    (u + n / 2) % n
}

fn check_grid(len: usize, height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        bail!(InvalidShape, "zero-sized grid {}x{}", height, width);
    }
    if len != height * width {
        bail!(
            InvalidShape,
            "grid of {} values is not {}x{}",
            len,
            height,
            width
        );
    }
    Ok(())
}

fn to_centered(natural: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let mut bins = vec![Complex64::new(0.0, 0.0); natural.len()];
    for i in 0..height {
        let u = shifted_to_natural(i, height);
        for j in 0..width {
            let v = shifted_to_natural(j, width);
            bins[i * width + j] = natural[u * width + v];
        }
    }
    bins
}

fn to_natural(centered: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let mut bins = vec![Complex64::new(0.0, 0.0); centered.len()];
    for u in 0..height {
        let i = natural_to_shifted(u, height);
        for v in 0..width {
            let j = natural_to_shifted(v, width);
            bins[u * width + v] = centered[i * width + j];
        }
    }
    bins
}

/// Forward 2D DFT of a row-major real grid, returned DC-centered.
pub fn dft2<T: Scalar>(grid: &[T], height: usize, width: usize) -> Result<Spectrum> {
    check_grid(grid.len(), height, width)?;
    let plan = Plan2d::new(height, width)?;
    let natural = plan.forward_natural(grid);
    Ok(Spectrum {
        height,
        width,
        bins: to_centered(&natural, height, width),
    })
}

/// Inverse 2D DFT (normalized by `1/(h*w)`), complex row-major output.
pub fn idft2(spectrum: &Spectrum) -> Result<Vec<Complex64>> {
    check_grid(spectrum.bins.len(), spectrum.height, spectrum.width)?;
    let plan = Plan2d::new(spectrum.height, spectrum.width)?;
    let natural = to_natural(&spectrum.bins, spectrum.height, spectrum.width);
    Ok(plan.inverse_natural(natural))
}

/// Exact low/high partition of the spectrum at a radius around the DC bin.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    pub height: usize,
    pub width: usize,
    pub radius: f64,
    /// DC-centered layout.
    pub low: Vec<bool>,
    /// DC-centered layout; complement of `low`.
    pub high: Vec<bool>,
    low_natural: Vec<bool>,
}

impl FrequencyMask {
    /// Circular mask: a bin is low iff its Euclidean distance from the
    /// centered DC bin is `<= radius`.
    pub fn new(height: usize, width: usize, radius: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            bail!(InvalidShape, "zero-sized grid {}x{}", height, width);
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            bail!(
                InvalidArgument,
                "radius must be finite and >= 0, got {}",
                radius
            );
        }
        let (ch, cw) = ((height / 2) as f64, (width / 2) as f64);
        let r2 = radius * radius;
        let mut low = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                let (di, dj) = (i as f64 - ch, j as f64 - cw);
                low.push(di * di + dj * dj <= r2);
            }
        }
        let high = low.iter().map(|b| !b).collect();
        let mut low_natural = vec![false; height * width];
        for u in 0..height {
            let i = natural_to_shifted(u, height);
            for v in 0..width {
                let j = natural_to_shifted(v, width);
                low_natural[u * width + v] = low[i * width + j];
            }
        }
        Ok(FrequencyMask {
            height,
            width,
            radius,
            low,
            high,
            low_natural,
        })
    }

    pub fn low_count(&self) -> usize {
        self.low.iter().filter(|&&b| b).count()
    }

    /// Low-band membership in natural (unshifted) layout.
    pub fn low_natural(&self) -> &[bool] {
        &self.low_natural
    }
}

/// Free-function form of [`FrequencyMask::new`].
pub fn make_masks(height: usize, width: usize, radius: f64) -> Result<FrequencyMask> {
    FrequencyMask::new(height, width, radius)
}

/// Low- and high-frequency reconstructions of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition<T = f32> {
    pub lfc: Tensor<T>,
    pub hfc: Tensor<T>,
}

/// Reusable splitter for one grid size and radius.
#[derive(Clone, Debug)]
pub struct BandSplitter {
    plan: Plan2d,
    mask: FrequencyMask,
}

impl BandSplitter {
    pub fn new(height: usize, width: usize, radius: f64) -> Result<Self> {
        Ok(BandSplitter {
            plan: Plan2d::new(height, width)?,
            mask: FrequencyMask::new(height, width, radius)?,
        })
    }

    pub fn mask(&self) -> &FrequencyMask {
        &self.mask
    }

    /// Split one `h x w` channel into `(lfc, hfc)` written to the output slices.
    pub fn split_into<T: Scalar>(&self, channel: &[T], lfc: &mut [T], hfc: &mut [T]) -> Result<()> {
        let n = self.plan.height * self.plan.width;
        check_grid(channel.len(), self.plan.height, self.plan.width)?;
        if lfc.len() != n || hfc.len() != n {
            bail!(InvalidShape, "output slices must hold {} values", n);
        }
        let spectrum = self.plan.forward_natural(channel);
        let zero = Complex64::new(0.0, 0.0);
        let low_bins: Vec<Complex64> = spectrum
            .iter()
            .zip(&self.mask.low_natural)
            .map(|(&z, &keep)| if keep { z } else { zero })
            .collect();
        let high_bins: Vec<Complex64> = spectrum
            .iter()
            .zip(&self.mask.low_natural)
            .map(|(&z, &keep)| if keep { zero } else { z })
            .collect();
        let low = self.plan.inverse_natural(low_bins);
        let high = self.plan.inverse_natural(high_bins);

        let scale = channel
            .iter()
            .fold(1.0f64, |m, v| m.max(v.as_f64().abs()));
        let residue = low
            .iter()
            .chain(high.iter())
            .fold(0.0f64, |m, z| m.max(z.im.abs()));
        if residue > IMAG_RESIDUE_TOL * scale {
            return Err(Error::Invariant(format!(
                "imaginary residue {:e} after band inverse exceeds tolerance",
                residue
            )));
        }
        for (dst, z) in lfc.iter_mut().zip(&low) {
            *dst = T::of(z.re);
        }
        for (dst, z) in hfc.iter_mut().zip(&high) {
            *dst = T::of(z.re);
        }
        Ok(())
    }

    pub fn low_pass<T: Scalar>(&self, channel: &[T]) -> Result<Vec<T>> {
        let n = channel.len();
        let mut lfc = vec![T::zero(); n];
        let mut hfc = vec![T::zero(); n];
        self.split_into(channel, &mut lfc, &mut hfc)?;
        Ok(lfc)
    }
}

/// Split every channel of a `C x H x W` (or `N x C x H x W`) tensor into
/// low- and high-frequency parts at `radius`.
pub fn decompose<T: Scalar>(image: &Tensor<T>, radius: f64) -> Result<Decomposition<T>> {
    let (h, w) = match *image.dims() {
        [_, h, w] | [_, _, h, w] => (h, w),
        _ => bail!(
            InvalidShape,
            "expected C x H x W or N x C x H x W, got {:?}",
            image.dims()
        ),
    };
    if !image.all_finite() {
        bail!(InvalidData, "image contains non-finite values");
    }
    let splitter = BandSplitter::new(h, w, radius)?;
    let mut lfc = Tensor::zeros(image.dims());
    let mut hfc = Tensor::zeros(image.dims());
    let plane = h * w;
    for ((src, lo), hi) in image
        .data()
        .chunks_exact(plane)
        .zip(lfc.data_mut().chunks_exact_mut(plane))
        .zip(hfc.data_mut().chunks_exact_mut(plane))
    {
        splitter.split_into(src, lo, hi)?;
    }
    Ok(Decomposition { lfc, hfc })
}

/// Radius for a feature map of `spatial_size`, keeping the same fraction of
/// the spatial extent: `max(1, round(fraction * size))`.
pub fn scaled_radius(radius_fraction: f64, spatial_size: usize) -> Result<f64> {
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        bail!(
            InvalidArgument,
            "radius fraction must lie in (0, 1], got {}",
            radius_fraction
        );
    }
    if spatial_size == 0 {
        bail!(InvalidArgument, "spatial size must be >= 1");
    }
    let r = libm::round(radius_fraction * spatial_size as f64);
    Ok(r.max(1.0))
}

/// Radius that puts every bin of an `h x w` spectrum into the low band.
pub fn full_radius(height: usize, width: usize) -> f64 {
    let (a, b) = (height.div_ceil(2) as f64, width.div_ceil(2) as f64);
    // Rounded up so the farthest corner survives the squared comparison.
    libm::ceil(libm::sqrt(a * a + b * b))
}

/// Sum of squares.
pub fn energy<T: Scalar>(values: &[T]) -> f64 {
    values.iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Direct O(N^2) summation in natural layout.
    fn naive_dft(grid: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for ku in 0..h {
            for kv in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let theta = -2.0
                            * PI
                            * ((ku * y) as f64 / h as f64 + (kv * x) as f64 / w as f64);
                        acc += Complex64::new(theta.cos(), theta.sin()) * grid[y * w + x];
                    }
                }
                out[ku * w + kv] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_grid_is_dc_only() {
        let c = 0.37;
        let s = dft2(&[c; 16], 4, 4).unwrap();
        assert!((s.dc().re - 16.0 * c).abs() < 1e-12);
        let others = s
            .bins
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 2 * 4 + 2)
            .fold(0.0f64, |m, (_, z)| m.max(z.norm()));
        assert!(others < 1e-12);
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut g = [0.0f64; 16];
        g[0] = 1.0;
        let s = dft2(&g, 4, 4).unwrap();
        for z in &s.bins {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_sizes_match_naive_dft_and_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(h, w) in &[(7, 5), (3, 8), (1, 6), (5, 1), (16, 16)] {
            let g = random_grid(&mut rng, h * w);
            let s = dft2(&g, h, w).unwrap();
            let oracle = to_centered(&naive_dft(&g, h, w), h, w);
            for (a, b) in s.bins.iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-6, "{}x{}", h, w);
            }
            let back = idft2(&s).unwrap();
            for (z, &x) in back.iter().zip(&g) {
                assert!((z.re - x).abs() < 1e-6 && z.im.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_sized_grid_rejected() {
        assert!(matches!(
            dft2::<f64>(&[], 0, 3),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn mask_boundaries() {
        let m = make_masks(4, 4, 0.0).unwrap();
        assert_eq!(m.low_count(), 1);
        assert!(m.low[2 * 4 + 2]);

        // distances from (2,2) over a 4x4 grid: exactly 5 bins within 1
        let m = make_masks(4, 4, 1.0).unwrap();
        let mut expected = 0;
        for i in 0..4i32 {
            for j in 0..4i32 {
                if (i - 2).pow(2) + (j - 2).pow(2) <= 1 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 5);
        assert_eq!(m.low_count(), 5);

        for &(h, w) in &[(4, 4), (5, 7), (32, 32)] {
            let m = make_masks(h, w, full_radius(h, w)).unwrap();
            assert_eq!(m.low_count(), h * w);
            assert!(m.high.iter().all(|b| !b));
        }
        assert!(matches!(
            make_masks(4, 4, -0.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mask_is_exact_partition() {
        for r in [0.0, 0.5, 1.0, 2.5, 9.0] {
            let m = make_masks(6, 9, r).unwrap();
            assert!(m.low.iter().zip(&m.high).all(|(l, h)| l ^ h));
        }
    }

    #[test]
    fn shifted_and_natural_mask_application_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(h, w, r) in &[(8usize, 8usize, 2.0), (7, 5, 1.5), (6, 9, 3.0)] {
            let g = random_grid(&mut rng, h * w);
            // shifted route: centered spectrum, centered mask
            let mut s = dft2(&g, h, w).unwrap();
            let m = make_masks(h, w, r).unwrap();
            for (z, &keep) in s.bins.iter_mut().zip(&m.low) {
                if !keep {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
            let via_shifted: Vec<f64> = idft2(&s).unwrap().iter().map(|z| z.re).collect();
            // natural route
            let via_natural = BandSplitter::new(h, w, r).unwrap().low_pass(&g).unwrap();
            for (a, b) in via_shifted.iter().zip(&via_natural) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_is_pure_lfc() {
        let img = Tensor::<f64>::full(&[3, 8, 8], 0.6);
        for r in [0.0, 1.0, 4.0] {
            let d = decompose(&img, r).unwrap();
            assert!(d.lfc.max_abs_diff(&img) < 1e-12);
            assert!(d.hfc.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn full_radius_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Tensor::from_vec(&[3, 8, 8], random_grid(&mut rng, 192)).unwrap();
        let d = decompose(&img, full_radius(8, 8)).unwrap();
        assert!(d.lfc.max_abs_diff(&img) < 1e-12);
        assert!(d.hfc.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn decomposition_recomposes_with_disjoint_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::from_vec(&[3, 8, 8], random_grid(&mut rng, 192)).unwrap();
        let d = decompose(&img, 2.0).unwrap();
        for ((x, l), h) in img.data().iter().zip(d.lfc.data()).zip(d.hfc.data()) {
            assert!((x - (l + h)).abs() <= 1e-5);
        }
        for c in 0..3 {
            let sl = dft2(&d.lfc.data()[c * 64..(c + 1) * 64], 8, 8).unwrap();
            let sh = dft2(&d.hfc.data()[c * 64..(c + 1) * 64], 8, 8).unwrap();
            for (a, b) in sl.bins.iter().zip(&sh.bins) {
                assert!((a * b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn non_finite_image_rejected() {
        let mut img = Tensor::<f32>::zeros(&[1, 4, 4]);
        img.data_mut()[3] = f32::NAN;
        assert!(matches!(decompose(&img, 1.0), Err(Error::InvalidData(_))));
    }

    #[test]
    fn scaled_radius_cases() {
        assert_eq!(scaled_radius(0.25, 32).unwrap(), 8.0);
        assert_eq!(scaled_radius(0.25, 4).unwrap(), 1.0);
        assert_eq!(scaled_radius(0.25, 2).unwrap(), 1.0);
        assert!(scaled_radius(0.0, 32).is_err());
        assert!(scaled_radius(1.5, 32).is_err());
    }
}
