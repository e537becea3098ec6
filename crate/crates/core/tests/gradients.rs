//! Analytic gradients against central finite differences in f64.

use freqcoda_core::nn::{
    cross_entropy_loss, BatchNorm, BnMode, BufferKind, Conv2d, Linear, ParamKind, TensorVisitor,
};
use freqcoda_core::quant::{fake_quantize_backward, QuantKind, QuantizerState};
use freqcoda_core::tta::{configure, Method, RadiusRule};
use freqcoda_core::{build_resnet, ResNetConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `||a - n|| / max(||a||, ||n||)`.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if na.max(nn) == 0.0 {
        0.0
    } else {
        diff / na.max(nn)
    }
}

/// Central differences of `f` with respect to every entry of `x`.
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

#[test]
fn conv_input_and_weight_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, stride, pad, &mut rng);
        let mut x = random(&mut rng, &[2, 2, 5, 5]);
        let y = conv.forward(&x, true).unwrap();
        let g = random(&mut rng, y.dims());
        conv.grad.iter_mut().for_each(|v| *v = 0.0);
        let gx = conv.backward(&g).unwrap();

        let dims = x.dims().to_vec();
        let mut probe = conv.clone();
        let num_x = numeric_grad(x.data_mut(), |d| {
            let t = Tensor::from_vec(&dims, d.to_vec()).unwrap();
            dot(&probe.forward(&t, false).unwrap(), &g)
        });
        assert!(rel_err(gx.data(), &num_x) <= 1e-6, "stride {stride} pad {pad}");

        let mut w = conv.weight.clone();
        let num_w = numeric_grad(&mut w, |d| {
            probe.weight.copy_from_slice(d);
            dot(&probe.forward(&x, false).unwrap(), &g)
        });
        assert!(rel_err(&conv.grad, &num_w) <= 1e-6);
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut lin = Linear::<f64>::new("l", 6, 4, &mut rng);
    lin.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let mut x = random(&mut rng, &[3, 6]);
    let y = lin.forward(&x, true).unwrap();
    let g = random(&mut rng, y.dims());
    let gx = lin.backward(&g).unwrap();

    let mut probe = lin.clone();
    let num_x = numeric_grad(x.data_mut(), |d| {
        dot(&probe.forward(&Tensor::from_vec(&[3, 6], d.to_vec()).unwrap(), false).unwrap(), &g)
    });
    assert!(rel_err(gx.data(), &num_x) <= 1e-6);
    let mut w = lin.weight.clone();
    let num_w = numeric_grad(&mut w, |d| {
        probe.weight.copy_from_slice(d);
        dot(&probe.forward(&x, false).unwrap(), &g)
    });
    assert!(rel_err(&lin.grad_weight, &num_w) <= 1e-6);
    probe.weight.copy_from_slice(&lin.weight);
    let mut b = lin.bias.clone();
    let num_b = numeric_grad(&mut b, |d| {
        probe.bias.copy_from_slice(d);
        dot(&probe.forward(&x, false).unwrap(), &g)
    });
    assert!(rel_err(&lin.grad_bias, &num_b) <= 1e-6);
}

#[test]
fn batchnorm_train_mode_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bn = BatchNorm::<f64>::new("bn", 3);
    for c in 0..3 {
        bn.gamma[c] = rng.random_range(0.5..1.5);
        bn.beta[c] = rng.random_range(-0.5..0.5);
    }
    let mut x = random(&mut rng, &[4, 3, 3, 3]);
    let y = bn.forward(&x, BnMode::Train, true).unwrap();
    let g = random(&mut rng, y.dims());
    let gx = bn.backward(&g).unwrap();

    let dims = x.dims().to_vec();
    let mut probe = bn.clone();
    let num_x = numeric_grad(x.data_mut(), |d| {
        dot(&probe.forward(&Tensor::from_vec(&dims, d.to_vec()).unwrap(), BnMode::Train, false).unwrap(), &g)
    });
    assert!(rel_err(gx.data(), &num_x) <= 1e-6);
    let mut gamma = bn.gamma.clone();
    let num_g = numeric_grad(&mut gamma, |d| {
        probe.gamma.copy_from_slice(d);
        dot(&probe.forward(&x, BnMode::Train, false).unwrap(), &g)
    });
    assert!(rel_err(&bn.grad_gamma, &num_g) <= 1e-6);
    probe.gamma.copy_from_slice(&bn.gamma);
    let mut beta = bn.beta.clone();
    let num_b = numeric_grad(&mut beta, |d| {
        probe.beta.copy_from_slice(d);
        dot(&probe.forward(&x, BnMode::Train, false).unwrap(), &g)
    });
    assert!(rel_err(&bn.grad_beta, &num_b) <= 1e-6);
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut logits = random(&mut rng, &[5, 4]);
    logits.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    let labels = [0, 3, 1, 1, 2];
    let analytic = cross_entropy_loss(&logits, &labels).unwrap().grad;
    let num = numeric_grad(logits.data_mut(), |d| {
        cross_entropy_loss(&Tensor::from_vec(&[5, 4], d.to_vec()).unwrap(), &labels).unwrap().loss
    });
    assert!(rel_err(analytic.data(), &num) <= 1e-6);
}

/// Straight-through surrogate `s * (clamp(v/s) + c)` with the rounding
/// offset `c` frozen at `(v0, s0)`.
fn lsq_surrogate(v: &[f64], s: f64, v0: &[f64], s0: f64, q: &QuantizerState<f64>, g: &[f64]) -> f64 {
    let (qn, qp) = (q.q_neg as f64, q.q_pos as f64);
    v.iter()
        .zip(v0)
        .zip(g)
        .map(|((&x, &x0), &gi)| {
            let u0 = (x0 / s0).clamp(qn, qp);
            let frozen = u0.round() - u0;
            gi * s * ((x / s).clamp(qn, qp) + frozen)
        })
        .sum()
}

#[test]
fn lsq_step_gradient_at_non_boundary_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (kind, bits) in [(QuantKind::Weight, 2), (QuantKind::Weight, 4), (QuantKind::Activation, 2), (QuantKind::Activation, 8)] {
        let q = QuantizerState::<f64>::new(kind, bits).unwrap().with_step(0.1);
        let (qn, qp) = (q.q_neg as f64, q.q_pos as f64);
        let lo = if kind == QuantKind::Weight { qn - 2.0 } else { -2.0 };
        // Keep every scaled value clear of rounding and clipping boundaries.
        let v: Vec<f64> = (0..40)
            .map(|_| loop {
                let u: f64 = rng.random_range(lo..qp + 2.0);
                let near_half = (u - u.floor() - 0.5).abs() < 0.05;
                let near_clip = (u - qn).abs() < 0.05 || (u - qp).abs() < 0.05;
                if !near_half && !near_clip {
                    break u * q.step;
                }
            })
            .collect();
        let g: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gx, gs) = fake_quantize_backward(&g, &v, &q).unwrap();
        let scale = 1.0 / (v.len() as f64 * qp).sqrt();
        let s0 = q.step;
        let numeric = (lsq_surrogate(&v, s0 + H, &v, s0, &q, &g) - lsq_surrogate(&v, s0 - H, &v, s0, &q, &g)) / (2.0 * H) * scale;
        assert!((gs - numeric).abs() / numeric.abs().max(1e-12) <= 1e-3, "{kind:?} {bits}: {gs} vs {numeric}");

        let mut vv = v.clone();
        let num_x = numeric_grad(&mut vv, |d| lsq_surrogate(d, s0, &v, s0, &q, &g));
        for ((a, n), x) in gx.iter().zip(&num_x).zip(&v) {
            assert!((a - n).abs() <= 1e-6 * n.abs().max(1.0), "v={x}: {a} vs {n}");
        }
    }
}

struct Params<'a> {
    target: usize,
    index: usize,
    delta: f64,
    seen: usize,
    out: &'a mut Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl TensorVisitor<f64> for Params<'_> {
    fn param(&mut self, layer: &str, field: &str, _: ParamKind, _: &[usize], value: &mut [f64], grad: &mut [f64]) {
        if self.seen == self.target && self.delta != 0.0 {
            value[self.index] += self.delta;
        }
        self.out.push((format!("{layer}.{field}"), value.to_vec(), grad.to_vec()));
        self.seen += 1;
    }

    fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], _: &mut [f64]) {}
}

fn params(model: &mut freqcoda_core::ResNet<f64>) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit(&mut Params { target: usize::MAX, index: 0, delta: 0.0, seen: 0, out: &mut out });
    out
}

fn nudge(model: &mut freqcoda_core::ResNet<f64>, target: usize, index: usize, delta: f64) {
    let mut out = Vec::new();
    model.visit(&mut Params { target, index, delta, seen: 0, out: &mut out });
}

/// Whole-network check: sampled parameter entries of a tiny ResNet under
/// the given BN mode, loss = cross-entropy.
fn network_check(method: Method, mode: BnMode) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = ResNetConfig { depth_blocks: vec![1, 1], base_width: 4, num_classes: 3, in_channels: 2, seed: 9 };
    let mut model = build_resnet::<f64>(&cfg).unwrap();
    configure(&mut model, method, 1.0, RadiusRule::Fraction(0.5)).unwrap();
    let x = random(&mut rng, &[3, 2, 8, 8]);
    let labels = [0, 2, 1];
    let loss = |m: &mut freqcoda_core::ResNet<f64>| {
        let logits = m.forward(&x, mode, false).unwrap();
        cross_entropy_loss(&logits, &labels).unwrap().loss
    };
    model.zero_grad();
    let logits = model.forward(&x, mode, true).unwrap();
    let ce = cross_entropy_loss(&logits, &labels).unwrap();
    model.backward(&ce.grad).unwrap();
    let snapshot = params(&mut model);
    let (mut checked, mut skipped) = (0usize, 0usize);
    for (p, (name, value, grad)) in snapshot.iter().enumerate() {
        let picks: Vec<usize> = (0..value.len().min(4)).map(|_| rng.random_range(0..value.len())).collect();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &i in &picks {
            let central = |h: f64| {
                let mut probe = model.clone();
                nudge(&mut probe, p, i, h);
                let up = loss(&mut probe);
                nudge(&mut probe, p, i, -2.0 * h);
                (up - loss(&mut probe)) / (2.0 * h)
            };
            let (coarse, fine) = (central(H), central(H / 10.0));
            // A ReLU kink within the probe interval makes the loss non-smooth there.
            if (coarse - fine).abs() > 1e-5 * coarse.abs().max(1e-3) {
                skipped += 1;
                continue;
            }
            analytic.push(grad[i]);
            numeric.push(coarse);
            checked += 1;
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err <= 1e-6, "{method} {name}: rel err {err} ({analytic:?} vs {numeric:?})");
    }
    assert!(skipped * 10 <= checked, "{skipped} kinked probes vs {checked} checked");
}

#[test]
fn resnet_train_mode_gradients() {
    network_check(Method::None, BnMode::Train);
}

#[test]
fn norm_adaptation_backpropagates_through_batch_stats() {
    network_check(Method::Norm, BnMode::Adapt { commit: false });
}

