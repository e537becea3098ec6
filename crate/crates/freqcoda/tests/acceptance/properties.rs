//! Exact property suites. Oracles here are written independently of the
//! library code they check.

use std::f64::consts::PI;
use std::time::Instant;

use freqcoda_core::analysis::{frequency_distance_matrix, Band};
use freqcoda_core::data::{synth_dataset, CorruptionKind, CorruptionSpec};
use freqcoda_core::nn::{cross_entropy_loss, entropy_loss, BatchNorm, BnMode, Conv2d, Linear, NamedTensor};
use freqcoda_core::optim::{Optimizer, ParamFilter, SgdConfig, UpdateRule};
use freqcoda_core::quant::{fake_quantize_backward, quantized_weights, wrap_quantized, QuantKind, QuantizerState};
use freqcoda_core::spectral::{decompose, full_radius, make_masks};
use freqcoda_core::tta::{configure, sar_step, AdaptConfig, Adapter, FabnLayer, Method, RadiusRule, SarConfig};
use freqcoda_core::{build_resnet, ResNet, ResNetConfig, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::Verdict;

pub const ALL: [(u8, &str, fn() -> Verdict); 7] = [
    (1, "decomposition identity", decomposition_identity),
    (2, "band statistics add up", band_statistics_add_up),
    (3, "gradient checks", gradient_checks),
    (4, "blend factor limits", blend_factor_limits),
    (5, "adaptation footprint", adaptation_footprint),
    (6, "quantizer grid", quantizer_grid),
    (7, "distance matrix structure", distance_matrix_structure),
];

fn uniform(rng: &mut StdRng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Signed frequency of natural bin `k` on an axis of length `n`, matching a
/// DC-centred layout where the centre sits at `n / 2`.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n - n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Naive separable DFT low-pass of one `h x w` plane.
fn naive_low_pass(x: &[f64], h: usize, w: usize, radius: f64) -> Vec<f64> {
    let dft = |data: &[(f64, f64)], n: usize, sign: f64| -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                data.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &(a, b))| {
                    let ang = sign * 2.0 * PI * (k * t % n) as f64 / n as f64;
                    let (s, c) = ang.sin_cos();
                    (re + a * c - b * s, im + a * s + b * c)
                })
            })
            .collect()
    };
    let mut grid: Vec<(f64, f64)> = x.iter().map(|&v| (v, 0.0)).collect();
    let pass = |grid: &mut Vec<(f64, f64)>, sign: f64| {
        for r in 0..h {
            let row = dft(&grid[r * w..(r + 1) * w], w, sign);
            grid[r * w..(r + 1) * w].copy_from_slice(&row);
        }
        for c in 0..w {
            let col: Vec<_> = (0..h).map(|r| grid[r * w + c]).collect();
            for (r, v) in dft(&col, h, sign).into_iter().enumerate() {
                grid[r * w + c] = v;
            }
        }
    };
    pass(&mut grid, -1.0);
    for u in 0..h {
        for v in 0..w {
            let (fu, fv) = (signed_freq(u, h), signed_freq(v, w));
            if fu * fu + fv * fv > radius * radius {
                grid[u * w + v] = (0.0, 0.0);
            }
        }
    }
    pass(&mut grid, 1.0);
    grid.iter().map(|&(re, _)| re / (h * w) as f64).collect()
}

fn decomposition_identity() -> Verdict {
    let t = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let radii = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, full_radius(32, 32)];
    let images = uniform(&mut rng, &[1000, 3, 32, 32], 0.0, 1.0).cast::<f32>();
    let mut worst = 0.0f32;
    let mut disjoint = true;
    for &r in &radii {
        let mask = make_masks(32, 32, r).unwrap();
        disjoint &= mask.low.iter().zip(&mask.high).all(|(&l, &h)| u8::from(l) * u8::from(h) == 0 && (l || h));
        let d = decompose(&images, r).unwrap();
        for ((x, l), h) in images.data().iter().zip(d.lfc.data()).zip(d.hfc.data()) {
            worst = worst.max((x - (l + h)).abs());
        }
    }
    let elapsed = t.elapsed().as_secs_f64();

    // Independent DFT oracle on a few planes.
    let mut oracle = 0.0f64;
    for (i, &r) in [0.0, 2.0, 8.0].iter().enumerate() {
        let plane = &images.data()[i * 1024..(i + 1) * 1024];
        let x: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
        let want = naive_low_pass(&x, 32, 32, r);
        let got = decompose(&Tensor::from_vec(&[1, 32, 32], x).unwrap(), r).unwrap().lfc;
        oracle = oracle.max(got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let pass = worst <= 1e-5 && disjoint && oracle <= 1e-9 && elapsed < 60.0;
    Verdict::new(
        pass,
        format!("7000 decompositions, max |x-(lfc+hfc)| = {worst:.2e}, masks disjoint = {disjoint}, oracle dev = {oracle:.1e}, {elapsed:.1}s"),
    )
}

fn direct_stats(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let d = x.dims();
    let (n, c, plane) = (d[0], d[1], d[2] * d[3]);
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..n).flat_map(|i| x.data()[(i * c + ch) * plane..(i * c + ch + 1) * plane].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (m, vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64)
        })
        .unzip()
}

fn band_statistics_add_up() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2);
    let (mut mean_dev, mut var_rel) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let dims = [rng.random_range(1..6), rng.random_range(1..8), rng.random_range(2..14), rng.random_range(2..14)];
        let mut x = uniform(&mut rng, &dims, -1.0, 1.0);
        let shift: f64 = rng.random_range(-2.0..2.0);
        x.data_mut().iter_mut().for_each(|v| *v = *v * 1.5 + shift);
        let mut bn = BatchNorm::<f64>::new("bn", dims[1]);
        bn.running_mean.iter_mut().for_each(|m| *m = rng.random_range(-1.0..1.0));
        let radius = RadiusRule::Absolute(rng.random_range(0.0..6.0));
        let mut layer = FabnLayer::from_source(&bn, 1.0, radius).unwrap();
        let stats = layer.forward_stats(&x, true).unwrap();
        let (mean, var) = direct_stats(&x);
        for c in 0..dims[1] {
            mean_dev = mean_dev.max((stats.mean[c] - mean[c]).abs());
            var_rel = var_rel.max((stats.var[c] - var[c]).abs() / var[c]);
        }
    }

    let cfg = ResNetConfig { num_classes: 10, seed: 3, ..ResNetConfig::default() };
    let base = build_resnet::<f32>(&cfg).unwrap();
    let x = uniform(&mut rng, &[16, 3, 32, 32], -2.0, 2.0).cast::<f32>();
    let logits = |method| {
        let mut m = base.clone();
        configure(&mut m, method, 1.0, RadiusRule::Fraction(0.25)).unwrap();
        m.forward(&x, BnMode::Adapt { commit: true }, false).unwrap()
    };
    let logit_dev = logits(Method::Fabn).max_abs_diff(&logits(Method::Norm));
    let pass = mean_dev <= 1e-4 && var_rel <= 1e-3 && logit_dev <= 1e-4;
    Verdict::new(
        pass,
        format!("100 batches, mean dev {mean_dev:.1e}, var rel {var_rel:.1e}; alpha=1 vs batch-stat logits dev {logit_dev:.1e}"),
    )
}

const H: f64 = 1e-6;

fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(x);
            x[i] = orig - H;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn gradient_checks() -> Verdict {
    let t = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let mut errs: Vec<(&str, f64)> = Vec::new();

    for (stride, pad) in [(1, 1), (2, 1)] {
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, stride, pad, &mut rng);
        let mut x = uniform(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
        let y = conv.forward(&x, true).unwrap();
        let g = uniform(&mut rng, y.dims(), -1.0, 1.0);
        conv.grad.iter_mut().for_each(|v| *v = 0.0);
        let gx = conv.backward(&g).unwrap();
        let mut probe = conv.clone();
        let dims = x.dims().to_vec();
        let nx = numeric_grad(x.data_mut(), |d| dot(&probe.forward(&Tensor::from_vec(&dims, d.to_vec()).unwrap(), false).unwrap(), &g));
        let mut w = conv.weight.clone();
        let nw = numeric_grad(&mut w, |d| {
            probe.weight.copy_from_slice(d);
            dot(&probe.forward(&x, false).unwrap(), &g)
        });
        errs.push(("conv", rel_err(gx.data(), &nx).max(rel_err(&conv.grad, &nw))));
    }

    let mut lin = Linear::<f64>::new("l", 5, 4, &mut rng);
    let mut x = uniform(&mut rng, &[3, 5], -1.0, 1.0);
    let y = lin.forward(&x, true).unwrap();
    let g = uniform(&mut rng, y.dims(), -1.0, 1.0);
    let gx = lin.backward(&g).unwrap();
    let mut probe = lin.clone();
    let nx = numeric_grad(x.data_mut(), |d| dot(&probe.forward(&Tensor::from_vec(&[3, 5], d.to_vec()).unwrap(), false).unwrap(), &g));
    let mut w = lin.weight.clone();
    let nw = numeric_grad(&mut w, |d| {
        probe.weight.copy_from_slice(d);
        dot(&probe.forward(&x, false).unwrap(), &g)
    });
    errs.push(("linear", rel_err(gx.data(), &nx).max(rel_err(&lin.grad_weight, &nw))));

    let mut bn = BatchNorm::<f64>::new("bn", 3);
    bn.gamma.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
    bn.beta.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    let mut x = uniform(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
    let y = bn.forward(&x, BnMode::Train, true).unwrap();
    let g = uniform(&mut rng, y.dims(), -1.0, 1.0);
    let gx = bn.backward(&g).unwrap();
    let mut probe = bn.clone();
    let dims = x.dims().to_vec();
    let nx = numeric_grad(x.data_mut(), |d| {
        dot(&probe.forward(&Tensor::from_vec(&dims, d.to_vec()).unwrap(), BnMode::Train, false).unwrap(), &g)
    });
    let mut gamma = bn.gamma.clone();
    let ng = numeric_grad(&mut gamma, |d| {
        probe.gamma.copy_from_slice(d);
        dot(&probe.forward(&x, BnMode::Train, false).unwrap(), &g)
    });
    errs.push(("batchnorm", rel_err(gx.data(), &nx).max(rel_err(&bn.grad_gamma, &ng))));

    let mut logits = uniform(&mut rng, &[5, 4], -3.0, 3.0);
    let labels = [0, 3, 1, 1, 2];
    let analytic = cross_entropy_loss(&logits, &labels).unwrap().grad;
    let nl = numeric_grad(logits.data_mut(), |d| cross_entropy_loss(&Tensor::from_vec(&[5, 4], d.to_vec()).unwrap(), &labels).unwrap().loss);
    errs.push(("cross-entropy", rel_err(analytic.data(), &nl)));

    // Step gradient of the straight-through surrogate s * (clamp(v/s) + frozen offset).
    let mut lsq = 0.0f64;
    for (kind, bits) in [(QuantKind::Weight, 2), (QuantKind::Weight, 4), (QuantKind::Activation, 8)] {
        let q = QuantizerState::<f64>::new(kind, bits).unwrap().with_step(0.1);
        let (qn, qp) = (q.q_neg as f64, q.q_pos as f64);
        let v: Vec<f64> = (0..40)
            .map(|_| loop {
                let u: f64 = rng.random_range(qn - 2.0..qp + 2.0);
                if (u - u.floor() - 0.5).abs() > 0.05 && (u - qn).abs() > 0.05 && (u - qp).abs() > 0.05 {
                    break u * q.step;
                }
            })
            .collect();
        let g: Vec<f64> = v.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, gs) = fake_quantize_backward(&g, &v, &q).unwrap();
        let surrogate = |s: f64| -> f64 {
            v.iter()
                .zip(&g)
                .map(|(&x, &gi)| {
                    let u0 = (x / q.step).clamp(qn, qp);
                    gi * s * ((x / s).clamp(qn, qp) + u0.round() - u0)
                })
                .sum()
        };
        let numeric = (surrogate(q.step + H) - surrogate(q.step - H)) / (2.0 * H) / (v.len() as f64 * qp).sqrt();
        lsq = lsq.max((gs - numeric).abs() / numeric.abs().max(1e-12));
    }

    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let elapsed = t.elapsed().as_secs_f64();
    let detail: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Verdict::new(
        worst <= 1e-6 && lsq <= 1e-3 && elapsed < 60.0,
        format!("{}, quantizer step {lsq:.1e}, {elapsed:.1}s", detail.join(", ")),
    )
}

fn blend_factor_limits() -> Verdict {
    let mut rng = StdRng::seed_from_u64(5);
    let mut bn = BatchNorm::<f64>::new("bn", 4);
    bn.running_mean.iter_mut().for_each(|m| *m = rng.random_range(-1.0..1.0));
    bn.running_var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    let batch = |rng: &mut StdRng| uniform(rng, &[3, 4, 8, 8], -2.0, 2.0);

    let mut frozen = FabnLayer::from_source(&bn, 0.0, RadiusRule::Fraction(0.25)).unwrap();
    let mut bitwise = true;
    for _ in 0..50 {
        frozen.forward_stats(&batch(&mut rng), true).unwrap();
        bitwise &= frozen.mu_lfc.iter().zip(&bn.running_mean).all(|(a, b)| a.to_bits() == b.to_bits())
            && frozen.var_lfc.iter().zip(&bn.running_var).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let mut follow = FabnLayer::from_source(&bn, 1.0, RadiusRule::Fraction(0.25)).unwrap();
    let mut tracks = true;
    for _ in 0..10 {
        let x = batch(&mut rng);
        follow.forward_stats(&x, true).unwrap();
        let b = follow.band_stats(&x).unwrap().lfc;
        tracks &= follow.mu_lfc == b.mean && follow.var_lfc == b.var;
    }

    let mut contraction = 0.0f64;
    let x = batch(&mut rng);
    for alpha in [0.1, 0.3, 0.75] {
        let mut layer = FabnLayer::from_source(&bn, alpha, RadiusRule::Fraction(0.25)).unwrap();
        let target = layer.band_stats(&x).unwrap().lfc;
        for t in 1..=30 {
            layer.forward_stats(&x, true).unwrap();
            let k = (1.0 - alpha).powi(t);
            for c in 0..4 {
                let want_m = target.mean[c] + k * (bn.running_mean[c] - target.mean[c]);
                let want_v = target.var[c] + k * (bn.running_var[c] - target.var[c]);
                contraction = contraction.max((layer.mu_lfc[c] - want_m).abs()).max((layer.var_lfc[c] - want_v).abs());
            }
        }
    }
    Verdict::new(
        bitwise && tracks && contraction <= 1e-6,
        format!("alpha=0 bitwise over 50 batches = {bitwise}, alpha=1 tracks = {tracks}, contraction dev {contraction:.1e}"),
    )
}

fn source_model<T: freqcoda_core::Scalar>(bits: u32, rng: &mut StdRng) -> ResNet<T> {
    let cfg = ResNetConfig { base_width: 4, num_classes: 4, seed: 6, ..ResNetConfig::default() };
    let mut m = build_resnet::<T>(&cfg).unwrap();
    for bn in m.batchnorms_mut() {
        for c in 0..bn.channels {
            bn.running_mean[c] = T::of(rng.random_range(-0.2..0.2));
            bn.running_var[c] = T::of(rng.random_range(0.5..1.5));
            bn.gamma[c] = T::of(rng.random_range(0.8..1.2));
        }
    }
    if bits > 0 {
        m = wrap_quantized(m, bits).unwrap();
        m.forward(&uniform(rng, &[4, 3, 16, 16], -1.5, 1.5).cast(), BnMode::Eval, false).unwrap();
    }
    m
}

fn affine(t: &NamedTensor<f32>) -> bool {
    t.name.ends_with(".gamma") || t.name.ends_with(".beta")
}

fn adaptation_footprint() -> Verdict {
    let mut rng = StdRng::seed_from_u64(7);
    let mut untouched = true;
    let mut moved = true;
    for method in [Method::Tent, Method::Sar, Method::FabnTent, Method::FabnSar] {
        let mut source = source_model::<f32>(2, &mut rng);
        let before = source.state();
        let config = AdaptConfig { method, sar: SarConfig { e0: Some(10.0), ..SarConfig::default() }, ..AdaptConfig::default() };
        let mut adapter = Adapter::new(&source, config).unwrap();
        for _ in 0..20 {
            adapter.step(&uniform(&mut rng, &[8, 3, 16, 16], -1.5, 1.5).cast()).unwrap();
        }
        let after = adapter.model_mut().state();
        for (a, b) in before.iter().zip(&after) {
            let same = a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if affine(a) {
                continue;
            }
            untouched &= same;
        }
        moved &= before.iter().zip(&after).any(|(a, b)| affine(a) && a != b);
    }

    // Without the perturbation the sharpness step reduces to an entropy-filtered step.
    let sgd = UpdateRule::Sgd(SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 0.0 });
    let mut worst = 0.0f64;
    for method in [Method::Sar, Method::FabnSar] {
        let mut base = source_model::<f64>(0, &mut rng);
        configure(&mut base, method, 0.1, RadiusRule::Fraction(0.25)).unwrap();
        let (mut sar, mut tent) = (base.clone(), base.clone());
        let mut opt_s = Optimizer::new(sgd, ParamFilter::BnAffine);
        let mut opt_t = Optimizer::new(sgd, ParamFilter::BnAffine);
        let e0 = 1.3;
        for _ in 0..5 {
            let x = uniform(&mut rng, &[12, 3, 16, 16], -1.5, 1.5);
            sar_step(&mut sar, &x, &mut opt_s, e0, 0.0).unwrap();
            tent.zero_grad();
            let logits = tent.forward(&x, BnMode::Adapt { commit: true }, true).unwrap();
            let keep: Vec<bool> = entropy_loss(&logits, None).unwrap().per_sample.iter().map(|&h| h < e0).collect();
            let el = entropy_loss(&logits, Some(&keep)).unwrap();
            if el.selected > 0 {
                tent.backward(&el.grad).unwrap();
                opt_t.step(&mut tent).unwrap();
            }
            tent.clear_cache();
        }
        let b0 = base.state();
        for ((s, t), o) in sar.state().iter().zip(&tent.state()).zip(&b0) {
            for ((x, y), z) in s.tensor.data().iter().zip(t.tensor.data()).zip(o.tensor.data()) {
                worst = worst.max(((x - z) - (y - z)).abs());
            }
        }
    }
    Verdict::new(
        untouched && moved && worst <= 1e-6,
        format!("non-affine bit-identical after 20 steps = {untouched}, affine moved = {moved}, zero-rho vs filtered entropy step delta dev {worst:.1e}"),
    )
}

fn quantizer_grid() -> Verdict {
    let mut grid_ok = true;
    let mut worst = String::new();
    for bits in [2u32, 4, 8] {
        for seed in 0..3 {
            let cfg = ResNetConfig { seed, ..ResNetConfig::default() };
            let model = wrap_quantized(build_resnet::<f32>(&cfg).unwrap(), bits).unwrap();
            for (name, q) in quantized_weights(&model).unwrap() {
                let mut levels: Vec<u32> = q.iter().map(|v| (v + 0.0).to_bits()).collect();
                levels.sort_unstable();
                levels.dedup();
                if levels.len() > 1 << bits {
                    grid_ok = false;
                    worst = format!(" ({name}: {} levels at {bits} bits)", levels.len());
                }
            }
        }
    }

    let mut rng = StdRng::seed_from_u64(8);
    let cfg = ResNetConfig { base_width: 4, num_classes: 3, seed: 2, ..ResNetConfig::default() };
    let mut model = wrap_quantized(build_resnet::<f32>(&cfg).unwrap(), 2).unwrap();
    let x = uniform(&mut rng, &[6, 3, 8, 8], 0.0, 1.0).cast::<f32>();
    let labels = [0, 1, 2, 0, 1, 2];
    let mut opt = Optimizer::new(UpdateRule::Sgd(SgdConfig { lr: 0.5, momentum: 0.9, weight_decay: 0.0 }), ParamFilter::All);
    for _ in 0..1000 {
        model.zero_grad();
        let logits = model.forward(&x, BnMode::Train, true).unwrap();
        model.backward(&cross_entropy_loss(&logits, &labels).unwrap().grad).unwrap();
        opt.step(&mut model).unwrap();
        model.clear_cache();
    }
    let steps: Vec<f32> = model.state().into_iter().filter(|t| t.name.ends_with("step")).map(|t| t.tensor.data()[0]).collect();
    let min_step = steps.iter().copied().fold(f32::INFINITY, f32::min);
    let positive = !steps.is_empty() && steps.iter().all(|s| s.is_finite() && *s > 0.0);
    Verdict::new(
        grid_ok && positive,
        format!("levels within 2^bits for 2/4/8 bits = {grid_ok}{worst}; smallest of {} steps after 1000 updates = {min_step:.2e}", steps.len()),
    )
}

fn distance_matrix_structure() -> Verdict {
    let mut ok = true;
    let mut checked = 0;
    for seed in 0..3 {
        let base = synth_dataset(seed, 80, 10).unwrap();
        let specs: Vec<CorruptionSpec> =
            CorruptionKind::SHIFTS.iter().map(|&k| CorruptionSpec::new(k, 3, seed + 11).unwrap()).collect();
        for band in [Band::Low, Band::High] {
            let a = frequency_distance_matrix(&base, &specs, 8.0, band, 4).unwrap();
            let b = frequency_distance_matrix(&base, &specs, 8.0, band, 4).unwrap();
            ok &= a == b;
            for m in std::iter::once(&a.overall).chain(a.per_class.iter().map(|(_, m)| m)) {
                let k = m.size();
                for i in 0..k {
                    ok &= m.get(i, i) == 0.0;
                    for j in 0..k {
                        ok &= m.get(i, j).to_bits() == m.get(j, i).to_bits();
                    }
                }
                checked += 1;
            }
        }
    }
    Verdict::new(ok, format!("{checked} matrices symmetric with zero diagonal and repeatable = {ok}"))
}
