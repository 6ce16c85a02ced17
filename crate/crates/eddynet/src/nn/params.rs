use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// What a parameterized layer is, as stored in weight files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    TransposedConv,
    BatchNorm,
}

impl LayerKind {
    pub fn tag(self) -> u32 {
        match self {
            LayerKind::Conv3x3 => 1,
            LayerKind::Conv1x1 => 2,
            LayerKind::TransposedConv => 3,
            LayerKind::BatchNorm => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(LayerKind::Conv3x3),
            2 => Some(LayerKind::Conv1x1),
            3 => Some(LayerKind::TransposedConv),
            4 => Some(LayerKind::BatchNorm),
            _ => None,
        }
    }
}

/// Weights and bias of a stride-1 "same" convolution.
///
/// Kernel layout is `(out_channels, in_channels, k, k)` with `k` 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let (o, _i, kh, kw) = weights.shape();
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::shape("ConvParams", "square 1x1 or 3x3 kernel", format!("{kh}x{kw}")));
        }
        if bias.len() != o {
            return Err(Error::shape("ConvParams bias", o, bias.len()));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.batch()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.channels()
    }

    pub fn kernel(&self) -> usize {
        self.weights.height()
    }

    pub fn kind(&self) -> LayerKind {
        if self.kernel() == 3 {
            LayerKind::Conv3x3
        } else {
            LayerKind::Conv1x1
        }
    }
}

/// Weights and bias of a stride-2 transposed convolution.
///
/// Kernel layout is `(in_channels, out_channels, k, k)` with `k` 2 or 3; the
/// operation is the adjoint of a stride-2 convolution with the transposed
/// kernel, so spatial resolution exactly doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposedConvParams<T> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> TransposedConvParams<T> {
    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let (_i, o, kh, kw) = weights.shape();
        if kh != kw || !(kh == 2 || kh == 3) {
            return Err(Error::shape(
                "TransposedConvParams",
                "square 2x2 or 3x3 kernel",
                format!("{kh}x{kw}"),
            ));
        }
        if bias.len() != o {
            return Err(Error::shape("TransposedConvParams bias", o, bias.len()));
        }
        Ok(TransposedConvParams { weights, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.batch()
    }

    pub fn out_channels(&self) -> usize {
        self.weights.channels()
    }

    pub fn kernel(&self) -> usize {
        self.weights.height()
    }
}

/// Per-channel batch normalization state.
///
/// `gamma`/`beta` are the trainable affine pair; the moving statistics feed
/// inference and carry `batches_tracked` so an untrained layer can be told
/// apart from a trained one after serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
    pub batches_tracked: u64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            moving_mean: vec![T::zero(); channels],
            moving_var: vec![T::one(); channels],
            batches_tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// A named layer's parameters; the unit the model builder assembles and the
/// weight file stores.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Conv(ConvParams<T>),
    TransposedConv(TransposedConvParams<T>),
    BatchNorm(BatchNormParams<T>),
}

impl<T: Scalar> LayerParams<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Conv(p) => p.kind(),
            LayerParams::TransposedConv(_) => LayerKind::TransposedConv,
            LayerParams::BatchNorm(_) => LayerKind::BatchNorm,
        }
    }

    /// Number of elements updated by the optimizer.
    pub fn trainable_count(&self) -> usize {
        match self {
            LayerParams::Conv(p) => p.weights.len() + p.bias.len(),
            LayerParams::TransposedConv(p) => p.weights.len() + p.bias.len(),
            LayerParams::BatchNorm(p) => p.gamma.len() + p.beta.len(),
        }
    }

    /// Trainable elements plus moving statistics.
    pub fn total_count(&self) -> usize {
        match self {
            LayerParams::BatchNorm(p) => self.trainable_count() + p.moving_mean.len() + p.moving_var.len(),
            _ => self.trainable_count(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::lit(x.as_f64())).collect()
        }
        match self {
            LayerParams::Conv(p) => LayerParams::Conv(ConvParams {
                weights: p.weights.cast(),
                bias: cast_vec(&p.bias),
            }),
            LayerParams::TransposedConv(p) => LayerParams::TransposedConv(TransposedConvParams {
                weights: p.weights.cast(),
                bias: cast_vec(&p.bias),
            }),
            LayerParams::BatchNorm(p) => LayerParams::BatchNorm(BatchNormParams {
                gamma: cast_vec(&p.gamma),
                beta: cast_vec(&p.beta),
                moving_mean: cast_vec(&p.moving_mean),
                moving_var: cast_vec(&p.moving_var),
                batches_tracked: p.batches_tracked,
            }),
        }
    }
}
