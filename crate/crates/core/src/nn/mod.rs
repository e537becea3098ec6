//! Layers with explicit forward/backward passes, enough for pre-activation
//! ResNet classifiers.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod resnet;

pub use activation::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, residual_add};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm, BatchStats, BnMode, Normalization};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvGeometry};
pub use linear::Linear;
pub use loss::{
    cross_entropy_loss, entropy, entropy_loss, softmax, softmax_rows, CrossEntropy, EntropyLoss,
};
pub use resnet::{build_resnet, NamedTensor, PreActBlock, ResNet, ResNetConfig};

/// Role of a trainable tensor; drives weight-decay groups and update footprints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    LinearBias,
    BnGamma,
    BnBeta,
    QuantStep,
}

impl ParamKind {
    pub fn is_bn_affine(self) -> bool {
        matches!(self, ParamKind::BnGamma | ParamKind::BnBeta)
    }

    pub fn takes_weight_decay(self) -> bool {
        !matches!(
            self,
            ParamKind::BnGamma | ParamKind::BnBeta | ParamKind::QuantStep
        )
    }
}

/// Non-trainable state that still belongs in a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BufferKind {
    RunningMean,
    RunningVar,
    Flag,
}

/// Walks every named tensor of a model in a fixed order.
///
/// Names are `<layer>.<field>`.
pub trait TensorVisitor<T> {
    fn param(
        &mut self,
        layer: &str,
        field: &str,
        kind: ParamKind,
        dims: &[usize],
        value: &mut [T],
        grad: &mut [T],
    );

    fn buffer(&mut self, layer: &str, field: &str, kind: BufferKind, dims: &[usize], value: &mut [T]);
}
