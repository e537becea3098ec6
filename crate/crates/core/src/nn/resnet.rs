//! Pre-activation residual networks.
//!
//! `stem conv -> stages of [BN-ReLU-conv-BN-ReLU-conv + skip] -> BN-ReLU ->
//! global average pool -> linear`. Stage `i` has width `base_width * 2^i`;
//! every stage after the first starts with a stride-2 block whose skip is a
//! 1x1 projection of the pre-activated input.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, residual_add, BatchNorm, BnMode, BufferKind,
    Conv2d, Linear, ParamKind, TensorVisitor,
};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ResNetConfig {
    /// Blocks per stage, e.g. `[1, 1, 1]`.
    pub depth_blocks: Vec<usize>,
    pub base_width: usize,
    pub num_classes: usize,
    pub in_channels: usize,
    pub seed: u64,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            depth_blocks: vec![1, 1, 1],
            base_width: 16,
            num_classes: 10,
            in_channels: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    pre1: Tensor<T>,
    pre2: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct PreActBlock<T: Scalar> {
    pub bn1: BatchNorm<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub shortcut: Option<Conv2d<T>>,
    cache: Option<BlockCache<T>>,
}

impl<T: Scalar> PreActBlock<T> {
    fn new(name: &str, in_c: usize, out_c: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = (stride != 1 || in_c != out_c)
            .then(|| Conv2d::new(format!("{name}.shortcut"), in_c, out_c, 1, stride, 0, rng));
        PreActBlock {
            bn1: BatchNorm::new(format!("{name}.bn1"), in_c),
            conv1: Conv2d::new(format!("{name}.conv1"), in_c, out_c, 3, stride, 1, rng),
            bn2: BatchNorm::new(format!("{name}.bn2"), out_c),
            conv2: Conv2d::new(format!("{name}.conv2"), out_c, out_c, 3, 1, 1, rng),
            shortcut,
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: BnMode, keep: bool) -> Result<Tensor<T>> {
        let pre1 = self.bn1.forward(x, mode, keep)?;
        let a1 = relu(&pre1);
        let skip = match self.shortcut.as_mut() {
            Some(sc) => sc.forward(&a1, keep)?,
            None => x.clone(),
        };
        let h = self.conv1.forward(&a1, keep)?;
        let pre2 = self.bn2.forward(&h, mode, keep)?;
        let a2 = relu(&pre2);
        let y = self.conv2.forward(&a2, keep)?;
        self.cache = keep.then_some(BlockCache { pre1, pre2 });
        residual_add(&y, &skip)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = self.cache.take() else {
            bail!(InvalidState, "{}: backward without cached forward", self.bn1.name);
        };
        let d_a2 = self.conv2.backward(dy)?;
        let d_h = self.bn2.backward(&relu_backward(&d_a2, &cache.pre2)?)?;
        let mut d_a1 = self.conv1.backward(&d_h)?;
        let mut dx = match self.shortcut.as_mut() {
            Some(sc) => {
                d_a1 = residual_add(&d_a1, &sc.backward(dy)?)?;
                None
            }
            None => Some(dy.clone()),
        };
        let d_bn1 = self.bn1.backward(&relu_backward(&d_a1, &cache.pre1)?)?;
        Ok(match dx.take() {
            Some(skip) => residual_add(&d_bn1, &skip)?,
            None => d_bn1,
        })
    }

    fn clear_cache(&mut self) {
        self.cache = None;
        self.bn1.clear_cache();
        self.bn2.clear_cache();
        self.conv1.clear_cache();
        self.conv2.clear_cache();
        if let Some(sc) = self.shortcut.as_mut() {
            sc.clear_cache();
        }
    }

    fn visit(&mut self, v: &mut dyn TensorVisitor<T>) {
        self.bn1.visit(v);
        self.conv1.visit(v);
        self.bn2.visit(v);
        self.conv2.visit(v);
        if let Some(sc) = self.shortcut.as_mut() {
            sc.visit(v);
        }
    }
}

#[derive(Clone, Debug)]
struct HeadCache<T> {
    pre_final: Tensor<T>,
}

/// A named tensor as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ResNet<T: Scalar> {
    pub config: ResNetConfig,
    pub stem: Conv2d<T>,
    pub blocks: Vec<PreActBlock<T>>,
    pub bn_final: BatchNorm<T>,
    pub head: Linear<T>,
    /// Bit width once wrapped for quantization-aware training.
    pub bits: Option<u32>,
    cache: Option<HeadCache<T>>,
}

/// Build a pre-activation ResNet with deterministic He-style initialisation.
pub fn build_resnet<T: Scalar>(config: &ResNetConfig) -> Result<ResNet<T>> {
    if config.depth_blocks.is_empty() || config.depth_blocks.contains(&0) {
        bail!(
            InvalidArgument,
            "every stage needs at least one block, got {:?}",
            config.depth_blocks
        );
    }
    if config.base_width < 4 {
        bail!(InvalidArgument, "base width must be >= 4, got {}", config.base_width);
    }
    if config.num_classes < 2 || config.in_channels == 0 {
        bail!(InvalidArgument, "need >= 2 classes and >= 1 input channel");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let w = config.base_width;
    let stem = Conv2d::new("stem", config.in_channels, w, 3, 1, 1, &mut rng);
    let mut blocks = Vec::new();
    let mut in_c = w;
    for (stage, &count) in config.depth_blocks.iter().enumerate() {
        let out_c = w << stage;
        for b in 0..count {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let name = format!("stage{}.block{}", stage + 1, b + 1);
            blocks.push(PreActBlock::new(&name, in_c, out_c, stride, &mut rng));
            in_c = out_c;
        }
    }
    Ok(ResNet {
        config: config.clone(),
        stem,
        blocks,
        bn_final: BatchNorm::new("bn_final", in_c),
        head: Linear::new("head", in_c, config.num_classes, &mut rng),
        bits: None,
        cache: None,
    })
}

impl<T: Scalar> ResNet<T> {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Logits `N x num_classes`. With `keep_cache` every layer keeps what its
    /// backward pass needs.
    pub fn forward(&mut self, input: &Tensor<T>, mode: BnMode, keep_cache: bool) -> Result<Tensor<T>> {
        let (_, c, _, _) = input.nchw()?;
        if c != self.config.in_channels {
            bail!(
                InvalidArgument,
                "model expects {} input channels, got {}",
                self.config.in_channels,
                c
            );
        }
        let mut h = self.stem.forward(input, keep_cache)?;
        for block in self.blocks.iter_mut() {
            h = block.forward(&h, mode, keep_cache)?;
        }
        let pre_final = self.bn_final.forward(&h, mode, keep_cache)?;
        let pooled = global_avg_pool(&relu(&pre_final))?;
        let logits = self.head.forward(&pooled, keep_cache)?;
        self.cache = keep_cache.then_some(HeadCache { pre_final });
        Ok(logits)
    }

    /// Accumulates gradients into every parameter slot; returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = self.cache.take() else {
            bail!(InvalidState, "model backward without cached forward");
        };
        let d_pooled = self.head.backward(grad_logits)?;
        let d_act = global_avg_pool_backward(&d_pooled, cache.pre_final.dims())?;
        let mut d = self.bn_final.backward(&relu_backward(&d_act, &cache.pre_final)?)?;
        for block in self.blocks.iter_mut().rev() {
            d = block.backward(&d)?;
        }
        self.stem.backward(&d)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.stem.clear_cache();
        for b in self.blocks.iter_mut() {
            b.clear_cache();
        }
        self.bn_final.clear_cache();
        self.head.clear_cache();
    }

    /// Visit every parameter and buffer in a fixed order.
    pub fn visit(&mut self, v: &mut dyn TensorVisitor<T>) {
        self.stem.visit(v);
        for b in self.blocks.iter_mut() {
            b.visit(v);
        }
        self.bn_final.visit(v);
        self.head.visit(v);
    }

    pub fn zero_grad(&mut self) {
        struct Zero;
        impl<T: Scalar> TensorVisitor<T> for Zero {
            fn param(&mut self, _: &str, _: &str, _: ParamKind, _: &[usize], _: &mut [T], grad: &mut [T]) {
                grad.fill(T::zero());
            }
            fn buffer(&mut self, _: &str, _: &str, _: BufferKind, _: &[usize], _: &mut [T]) {}
        }
        self.visit(&mut Zero);
    }

    pub fn batchnorms(&self) -> Vec<&BatchNorm<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.bn1);
            out.push(&b.bn2);
        }
        out.push(&self.bn_final);
        out
    }

    pub fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut out = Vec::new();
        for b in self.blocks.iter_mut() {
            out.push(&mut b.bn1);
            out.push(&mut b.bn2);
        }
        out.push(&mut self.bn_final);
        out
    }

    /// Every conv layer, stem first.
    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        let mut out = vec![&mut self.stem];
        for b in self.blocks.iter_mut() {
            out.push(&mut b.conv1);
            out.push(&mut b.conv2);
            if let Some(sc) = b.shortcut.as_mut() {
                out.push(sc);
            }
        }
        out
    }

    pub fn convs(&self) -> Vec<&Conv2d<T>> {
        let mut out = vec![&self.stem];
        for b in &self.blocks {
            out.push(&b.conv1);
            out.push(&b.conv2);
            if let Some(sc) = b.shortcut.as_ref() {
                out.push(sc);
            }
        }
        out
    }

    /// Snapshot of every parameter and buffer.
    pub fn state(&mut self) -> Vec<NamedTensor<T>> {
        struct Collect<T>(Vec<NamedTensor<T>>);
        impl<T: Scalar> TensorVisitor<T> for Collect<T> {
            fn param(&mut self, layer: &str, field: &str, _: ParamKind, dims: &[usize], value: &mut [T], _: &mut [T]) {
                self.push(layer, field, dims, value);
            }
            fn buffer(&mut self, layer: &str, field: &str, _: BufferKind, dims: &[usize], value: &mut [T]) {
                self.push(layer, field, dims, value);
            }
        }
        impl<T: Scalar> Collect<T> {
            fn push(&mut self, layer: &str, field: &str, dims: &[usize], value: &[T]) {
                self.0.push(NamedTensor {
                    name: format!("{layer}.{field}"),
                    tensor: Tensor::from_vec(dims, value.to_vec()).expect("visitor dims match value"),
                });
            }
        }
        let mut c = Collect(Vec::new());
        self.visit(&mut c);
        c.0
    }

    /// Load every parameter and buffer by name; all must be present with matching dims.
    pub fn load_state(&mut self, tensors: &[NamedTensor<T>]) -> Result<()> {
        struct Load<'a, T> {
            tensors: &'a [NamedTensor<T>],
            error: Option<String>,
        }
        impl<T: Scalar> Load<'_, T> {
            fn fill(&mut self, layer: &str, field: &str, dims: &[usize], value: &mut [T]) {
                if self.error.is_some() {
                    return;
                }
                let name = format!("{layer}.{field}");
                match self.tensors.iter().find(|t| t.name == name) {
                    Some(t) if t.tensor.dims() == dims => value.copy_from_slice(t.tensor.data()),
                    Some(t) => {
                        self.error = Some(format!("{name}: dims {:?} != {:?}", t.tensor.dims(), dims));
                    }
                    None => self.error = Some(format!("missing tensor {name}")),
                }
            }
        }
        impl<T: Scalar> TensorVisitor<T> for Load<'_, T> {
            fn param(&mut self, layer: &str, field: &str, _: ParamKind, dims: &[usize], value: &mut [T], _: &mut [T]) {
                self.fill(layer, field, dims, value);
            }
            fn buffer(&mut self, layer: &str, field: &str, _: BufferKind, dims: &[usize], value: &mut [T]) {
                self.fill(layer, field, dims, value);
            }
        }
        let mut snapshot = self.clone();
        let mut l = Load { tensors, error: None };
        snapshot.visit(&mut l);
        if let Some(e) = l.error {
            bail!(InvalidData, "{}", e);
        }
        *self = snapshot;
        Ok(())
    }

    /// Name of the first parameter whose value or gradient is non-finite.
    pub fn first_non_finite(&mut self) -> Option<String> {
        struct Find(Option<String>);
        impl<T: Scalar> TensorVisitor<T> for Find {
            fn param(&mut self, layer: &str, field: &str, _: ParamKind, _: &[usize], value: &mut [T], grad: &mut [T]) {
                if self.0.is_none() && value.iter().chain(grad.iter()).any(|v| !v.is_finite()) {
                    self.0 = Some(format!("{layer}.{field}"));
                }
            }
            fn buffer(&mut self, layer: &str, field: &str, _: BufferKind, _: &[usize], value: &mut [T]) {
                if self.0.is_none() && value.iter().any(|v| !v.is_finite()) {
                    self.0 = Some(format!("{layer}.{field}"));
                }
            }
        }
        let mut f = Find(None);
        self.visit(&mut f);
        f.0
    }

    pub fn param_count(&mut self) -> usize {
        self.state().iter().map(|t| t.tensor.len()).sum()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.convs().iter().map(|c| c.name.to_string()).collect()
    }
}
