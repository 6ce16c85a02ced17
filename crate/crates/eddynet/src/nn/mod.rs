//! The differentiable layer set: forward and backward kernels, weight
//! initialization, the ADAM step, and the finite-difference gradient checker.
//!
//! Every operation is a pure function of its explicit inputs (random state
//! included), so concurrent use on disjoint data is safe. Kernels may fan out
//! internally over independent output planes; each output element is written
//! by exactly one task with a fixed summation order, so results do not depend
//! on the thread count.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod params;
pub mod pool;
pub mod softmax;
pub mod transposed;

pub use activation::{activation_backward, activation_forward, relu, selu, Activation, SELU_ALPHA, SELU_LAMBDA};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward};
pub use dropout::{alpha_dropout, dropout, dropout_backward, DropMode, DropoutMask};
pub use init::{init_truncated_gaussian, VarianceRule};
pub use params::{BatchNormParams, ConvParams, LayerKind, LayerParams, TransposedConvParams};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, MaxPoolIndices};
pub use softmax::{softmax_backward, softmax_channels};
pub use transposed::{transposed_conv2d_backward, transposed_conv2d_forward};
