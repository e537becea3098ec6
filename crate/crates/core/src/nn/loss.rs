//! Softmax, cross-entropy and prediction entropy (natural log throughout).

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Log-softmax of one row, stabilized by max subtraction.
fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    log_softmax(row).into_iter().map(|v| v.exp()).collect()
}

pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let c = classes(logits)?;
    let data = logits.data().chunks_exact(c).flat_map(softmax).collect();
    Tensor::from_vec(logits.dims(), data)
}

fn classes<T: Scalar>(logits: &Tensor<T>) -> Result<usize> {
    match *logits.dims() {
        [_, c] if c > 0 => Ok(c),
        _ => bail!(InvalidShape, "expected N x C logits, got {:?}", logits.dims()),
    }
}

/// Shannon entropy `-sum p ln p` of a probability vector, with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(probabilities: &[T]) -> Result<T> {
    if probabilities.is_empty() {
        bail!(InvalidArgument, "entropy of an empty distribution");
    }
    if probabilities.iter().any(|&p| !(p >= T::zero())) {
        bail!(InvalidArgument, "probabilities must be non-negative");
    }
    let total: f64 = probabilities.iter().map(|p| p.as_f64()).sum();
    if (total - 1.0).abs() > 1e-6 {
        bail!(InvalidArgument, "probabilities sum to {}, not 1", total);
    }
    Ok(probabilities
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum())
}

#[derive(Clone, Debug)]
pub struct CrossEntropy<T: Scalar> {
    pub loss: T,
    /// Gradient of the mean loss w.r.t. the logits.
    pub grad: Tensor<T>,
    pub probs: Tensor<T>,
}

/// Mean of `-log softmax(logits)[label]` and its gradient.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<CrossEntropy<T>> {
    let c = classes(logits)?;
    let n = logits.dims()[0];
    if labels.len() != n {
        bail!(InvalidShape, "{} labels for {} rows", labels.len(), n);
    }
    if n == 0 {
        bail!(InvalidArgument, "cross-entropy of an empty batch");
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        bail!(InvalidArgument, "label {} outside [0, {})", bad, c);
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * c);
    let mut probs = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let lp = log_softmax(row);
        loss -= lp[label];
        for (j, &l) in lp.iter().enumerate() {
            let p = l.exp();
            probs.push(p);
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_n);
        }
    }
    Ok(CrossEntropy {
        loss: loss * inv_n,
        grad: Tensor::from_vec(logits.dims(), grad)?,
        probs: Tensor::from_vec(logits.dims(), probs)?,
    })
}

#[derive(Clone, Debug)]
pub struct EntropyLoss<T: Scalar> {
    /// Entropy of every row, selected or not.
    pub per_sample: Vec<T>,
    /// Mean entropy over selected rows (zero when none are selected).
    pub loss: T,
    pub selected: usize,
    /// Gradient of `loss` w.r.t. the logits.
    pub grad: Tensor<T>,
}

/// Mean prediction entropy over the rows where `select` is true (all rows
/// when `select` is `None`).
pub fn entropy_loss<T: Scalar>(logits: &Tensor<T>, select: Option<&[bool]>) -> Result<EntropyLoss<T>> {
    let c = classes(logits)?;
    let n = logits.dims()[0];
    if let Some(s) = select {
        if s.len() != n {
            bail!(InvalidShape, "selection has {} entries for {} rows", s.len(), n);
        }
    }
    let selected = select.map_or(n, |s| s.iter().filter(|&&b| b).count());
    let scale = if selected > 0 {
        T::one() / T::of(selected as f64)
    } else {
        T::zero()
    };
    let mut per_sample = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * c);
    let mut loss = T::zero();
    for (i, row) in logits.data().chunks_exact(c).enumerate() {
        let lp = log_softmax(row);
        let h: T = lp.iter().map(|&l| -l.exp() * l).sum();
        per_sample.push(h);
        let on = select.is_none_or(|s| s[i]);
        if on {
            loss += h * scale;
        }
        for &l in &lp {
            // dH/dz_k = -p_k (ln p_k + H)
            let g = -l.exp() * (l + h);
            grad.push(if on { g * scale } else { T::zero() });
        }
    }
    Ok(EntropyLoss {
        per_sample,
        loss,
        selected,
        grad: Tensor::from_vec(logits.dims(), grad)?,
    })
}
