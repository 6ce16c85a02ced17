//! The encoder-decoder segmentation network: a 3-stage, all-32-filter
//! U-shaped architecture with skip connections and a 1x1 pixel-wise
//! classification head.
//!
//! Two variants share the topology. `ReluBn` activates each stage
//! convolution with batch-norm + ReLU; `Selu` uses self-normalizing SELU
//! units with alpha dropout and keeps batch normalization only after the
//! resolution-changing junctions (max pooling, transposed convolution,
//! concatenation), where skip connections would otherwise disturb the
//! self-normalizing property.
//!
//! The network is fully convolutional: weights are independent of the input
//! size, and any single-channel input whose sides are divisible by
//! `2^stages` is accepted at inference time.

pub mod io;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    activation_backward, activation_forward, adam_step, alpha_dropout, batchnorm_backward,
    batchnorm_forward, conv2d_backward, conv2d_forward, dropout, dropout_backward,
    init_truncated_gaussian, maxpool2x2_backward, maxpool2x2_forward, softmax_backward,
    softmax_channels, transposed_conv2d_backward, transposed_conv2d_forward, Activation,
    AdamHyper, AdamState, BatchNormParams, BnCache, BnMode, ConvParams, DropMode, DropoutMask,
    LayerKind, LayerParams, MaxPoolIndices, TransposedConvParams, VarianceRule,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Activation family of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Batch normalization + ReLU after every stage convolution.
    ReluBn,
    /// SELU activations, alpha dropout, junction-placed batch normalization.
    Selu,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ReluBn => "relu_bn",
            Variant::Selu => "selu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu_bn" => Ok(Variant::ReluBn),
            "selu" => Ok(Variant::Selu),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant {other:?}; expected relu_bn or selu"
            ))),
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Variant::ReluBn => 0,
            Variant::Selu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Variant::ReluBn),
            1 => Some(Variant::Selu),
            _ => None,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EddyNetConfig {
    pub variant: Variant,
    pub stages: usize,
    pub filters: usize,
    pub dropout_rate: f64,
    /// Expected training input size; both sides must divide by `2^stages`.
    pub input_size: (usize, usize),
    pub classes: usize,
    /// `ReluBn` stage order: `false` is conv -> BN -> ReLU; `true` applies the
    /// activation first (conv -> ReLU -> BN).
    pub activation_before_bn: bool,
}

impl Default for EddyNetConfig {
    fn default() -> Self {
        EddyNetConfig {
            variant: Variant::ReluBn,
            stages: 3,
            filters: 32,
            dropout_rate: 0.2,
            input_size: (128, 128),
            classes: 3,
            activation_before_bn: false,
        }
    }
}

impl EddyNetConfig {
    pub fn with_variant(variant: Variant) -> Self {
        EddyNetConfig {
            variant,
            ..EddyNetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(Error::InvalidConfig("stages must be >= 1".into()));
        }
        if self.filters < 1 {
            return Err(Error::InvalidConfig("filters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.classes != 3 {
            return Err(Error::InvalidConfig("the class set is fixed to 3".into()));
        }
        let d = 1usize << self.stages;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {h}x{w} must be divisible by 2^stages = {d}"
            )));
        }
        Ok(())
    }

    fn activation(&self) -> Activation {
        match self.variant {
            Variant::ReluBn => Activation::Relu,
            Variant::Selu => Activation::Selu,
        }
    }

    fn variance_rule(&self) -> VarianceRule {
        match self.variant {
            Variant::ReluBn => VarianceRule::He,
            Variant::Selu => VarianceRule::Lecun,
        }
    }
}

/// One step of the forward program. Parameterized steps index into the layer
/// list; the rest are pure tensor plumbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Layer(usize),
    Activation(Activation),
    Dropout,
    MaxPool,
    PushSkip,
    ConcatSkip,
    Softmax,
}

/// Ordered, named layer parameters plus the forward program that consumes
/// them. Layer order follows the forward topological order.
#[derive(Debug, Clone)]
pub struct NetworkWeights<T> {
    config: EddyNetConfig,
    layers: Vec<(String, LayerParams<T>)>,
    steps: Vec<Step>,
}

/// Builder that registers layers while emitting the step program.
struct Assembler<T> {
    config: EddyNetConfig,
    layers: Vec<(String, LayerParams<T>)>,
    steps: Vec<Step>,
}

impl<T: Scalar> Assembler<T> {
    fn conv(&mut self, name: String, in_ch: usize, out_ch: usize, k: usize, rng: &mut ChaCha8Rng) {
        let fan_in = in_ch * k * k;
        let weights = init_truncated_gaussian::<T>((out_ch, in_ch, k, k), self.config.variance_rule(), fan_in, rng);
        let params = ConvParams::new(weights, vec![T::zero(); out_ch]).expect("builder shapes are valid");
        self.steps.push(Step::Layer(self.layers.len()));
        self.layers.push((name, LayerParams::Conv(params)));
    }

    fn transposed_conv(&mut self, name: String, in_ch: usize, out_ch: usize, k: usize, rng: &mut ChaCha8Rng) {
        let fan_in = in_ch * k * k;
        let weights = init_truncated_gaussian::<T>((in_ch, out_ch, k, k), self.config.variance_rule(), fan_in, rng);
        let params = TransposedConvParams::new(weights, vec![T::zero(); out_ch]).expect("builder shapes are valid");
        self.steps.push(Step::Layer(self.layers.len()));
        self.layers.push((name, LayerParams::TransposedConv(params)));
    }

    fn batchnorm(&mut self, name: String, channels: usize) {
        self.steps.push(Step::Layer(self.layers.len()));
        self.layers.push((name, LayerParams::BatchNorm(BatchNormParams::new(channels))));
    }

    fn activation(&mut self) {
        self.steps.push(Step::Activation(self.config.activation()));
    }

    /// Stage convolution plus its activation block, honoring the variant.
    fn conv_act(&mut self, name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) {
        match self.config.variant {
            Variant::Selu => {
                self.conv(format!("{name}_conv"), in_ch, out_ch, 3, rng);
                self.activation();
            }
            Variant::ReluBn => {
                self.conv(format!("{name}_conv"), in_ch, out_ch, 3, rng);
                if self.config.activation_before_bn {
                    self.activation();
                    self.batchnorm(format!("{name}_bn"), out_ch);
                } else {
                    self.batchnorm(format!("{name}_bn"), out_ch);
                    self.activation();
                }
            }
        }
    }
}

/// Transposed-convolution kernel size. 3x3 reproduces the published
/// architecture's parameter budget exactly; see the builder's report.
const UPCONV_KERNEL: usize = 3;

/// Assemble and initialize the network.
///
/// Encoder stage: two 3x3 convolutions (each with the variant's activation
/// block), dropout, then 2x2 max pooling; the dropout output feeds the skip
/// connection. Decoder stage: dropout, 2x-upsampling transposed convolution,
/// concatenation with the matching skip (64 channels in the default config),
/// then two 3x3 convolutions. A 1x1 convolution and a per-pixel softmax form
/// the head.
pub fn build_model<T: Scalar>(config: &EddyNetConfig, rng: &mut ChaCha8Rng) -> Result<NetworkWeights<T>> {
    config.validate()?;
    let f = config.filters;
    let mut a = Assembler {
        config: config.clone(),
        layers: Vec::new(),
        steps: Vec::new(),
    };

    for s in 1..=config.stages {
        let in_ch = if s == 1 { 1 } else { f };
        a.conv_act(&format!("enc{s}_1"), in_ch, f, rng);
        a.conv_act(&format!("enc{s}_2"), f, f, rng);
        a.steps.push(Step::Dropout);
        a.steps.push(Step::PushSkip);
        a.steps.push(Step::MaxPool);
        if config.variant == Variant::Selu {
            a.batchnorm(format!("enc{s}_pool_bn"), f);
        }
    }

    a.conv_act("bottleneck_1", f, f, rng);
    a.conv_act("bottleneck_2", f, f, rng);

    for s in 1..=config.stages {
        a.steps.push(Step::Dropout);
        a.transposed_conv(format!("dec{s}_upconv"), f, f, UPCONV_KERNEL, rng);
        if config.variant == Variant::Selu {
            a.batchnorm(format!("dec{s}_up_bn"), f);
        }
        a.steps.push(Step::ConcatSkip);
        if config.variant == Variant::Selu {
            a.batchnorm(format!("dec{s}_concat_bn"), 2 * f);
        }
        a.conv_act(&format!("dec{s}_1"), 2 * f, f, rng);
        a.conv_act(&format!("dec{s}_2"), f, f, rng);
    }

    a.conv(String::from("head_conv"), f, config.classes, 1, rng);
    a.steps.push(Step::Softmax);

    Ok(NetworkWeights {
        config: config.clone(),
        layers: a.layers,
        steps: a.steps,
    })
}

/// Forward execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-step values retained for the backward pass.
enum StepCache<T> {
    Conv { input: Tensor4<T> },
    TransposedConv { input: Tensor4<T> },
    BatchNorm(BnCache<T>),
    Activation { input: Tensor4<T> },
    Dropout(Option<DropoutMask<T>>),
    MaxPool(MaxPoolIndices),
    PushSkip,
    ConcatSkip { left_channels: usize },
    Softmax,
}

/// Everything [`backward`] needs from a training forward pass.
pub struct ForwardCache<T> {
    entries: Vec<StepCache<T>>,
    probs: Tensor4<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Distance of the closest activation input to its branch point, and half
    /// the tightest pooling winner margin. Finite-difference probes must stay
    /// below this so no branch flips between the two evaluations.
    pub(crate) fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for entry in &self.entries {
            match entry {
                StepCache::Activation { input } => {
                    for v in input.as_slice() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                StepCache::MaxPool(idx) => margin = margin.min(idx.min_gap() / 2.0),
                _ => {}
            }
        }
        margin
    }
}

/// Gradients of one layer's trainable parameters.
#[derive(Debug, Clone)]
pub enum LayerGrads<T> {
    Conv { weights: Tensor4<T>, bias: Vec<T> },
    TransposedConv { weights: Tensor4<T>, bias: Vec<T> },
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
}

/// Gradient set aligned one-to-one with [`NetworkWeights::layers`].
pub struct ModelGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn config(&self) -> &EddyNetConfig {
        &self.config
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &LayerParams<T>)> {
        self.layers.iter().map(|(name, params)| (name.as_str(), params))
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<(String, LayerParams<T>)> {
        &mut self.layers
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|(name, params)| (name.clone(), params.cast()))
                .collect(),
            steps: self.steps.clone(),
        }
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        let (_, c, h, w) = input.shape();
        if c != 1 {
            return Err(Error::shape("forward input channels", 1usize, format!("{:?}", input.shape())));
        }
        let d = 1usize << self.config.stages;
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::shape(
                "forward input size",
                format!("sides divisible by {d}"),
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    /// Training forward pass: batch statistics, live dropout, and a cache for
    /// [`backward`]. Updates batch-norm moving statistics in place.
    pub fn forward_train(
        &mut self,
        input: &Tensor4<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let mut entries = Vec::with_capacity(self.steps.len());
        let mut skips: Vec<Tensor4<T>> = Vec::new();
        let mut current = input.clone();
        let steps = self.steps.clone();
        let alpha = self.config.variant == Variant::Selu;
        let rate = self.config.dropout_rate;

        for step in steps {
            match step {
                Step::Layer(i) => match &mut self.layers[i].1 {
                    LayerParams::Conv(p) => {
                        let out = conv2d_forward(&current, p)?;
                        entries.push(StepCache::Conv { input: std::mem::replace(&mut current, out) });
                    }
                    LayerParams::TransposedConv(p) => {
                        let out = transposed_conv2d_forward(&current, p)?;
                        entries.push(StepCache::TransposedConv {
                            input: std::mem::replace(&mut current, out),
                        });
                    }
                    LayerParams::BatchNorm(p) => {
                        let (out, cache) = batchnorm_forward(&current, p, BnMode::Train)?;
                        current = out;
                        entries.push(StepCache::BatchNorm(cache.expect("train mode yields a cache")));
                    }
                },
                Step::Activation(act) => {
                    let out = activation_forward(&current, act);
                    entries.push(StepCache::Activation { input: std::mem::replace(&mut current, out) });
                }
                Step::Dropout => {
                    let (out, mask) = if alpha {
                        alpha_dropout(&current, rate, rng, DropMode::Train)?
                    } else {
                        dropout(&current, rate, rng, DropMode::Train)?
                    };
                    current = out;
                    entries.push(StepCache::Dropout(mask));
                }
                Step::MaxPool => {
                    let (out, idx) = maxpool2x2_forward(&current)?;
                    current = out;
                    entries.push(StepCache::MaxPool(idx));
                }
                Step::PushSkip => {
                    skips.push(current.clone());
                    entries.push(StepCache::PushSkip);
                }
                Step::ConcatSkip => {
                    let skip = skips.pop().expect("builder pairs every concat with a push");
                    let left_channels = current.channels();
                    current = Tensor4::concat_channels(&current, &skip)?;
                    entries.push(StepCache::ConcatSkip { left_channels });
                }
                Step::Softmax => {
                    current = softmax_channels(&current);
                    entries.push(StepCache::Softmax);
                }
            }
        }
        current.ensure_finite("forward probabilities")?;
        Ok((
            current.clone(),
            ForwardCache { entries, probs: current },
        ))
    }

    /// Inference forward pass: moving statistics, dropout disabled, no cache.
    pub fn forward_infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut skips: Vec<Tensor4<T>> = Vec::new();
        let mut current = input.clone();
        for step in &self.steps {
            match step {
                Step::Layer(i) => match &self.layers[*i].1 {
                    LayerParams::Conv(p) => current = conv2d_forward(&current, p)?,
                    LayerParams::TransposedConv(p) => current = transposed_conv2d_forward(&current, p)?,
                    LayerParams::BatchNorm(p) => {
                        // infer never mutates; clone the per-channel vectors only
                        let mut frozen = p.clone();
                        let (out, _) = batchnorm_forward(&current, &mut frozen, BnMode::Infer)?;
                        current = out;
                    }
                },
                Step::Activation(act) => current = activation_forward(&current, *act),
                Step::Dropout => {}
                Step::MaxPool => current = maxpool2x2_forward(&current)?.0,
                Step::PushSkip => skips.push(current.clone()),
                Step::ConcatSkip => {
                    let skip = skips.pop().expect("builder pairs every concat with a push");
                    current = Tensor4::concat_channels(&current, &skip)?;
                }
                Step::Softmax => current = softmax_channels(&current),
            }
        }
        current.ensure_finite("forward probabilities")?;
        Ok(current)
    }

    /// End-to-end gradient of a scalar loss through the whole network.
    ///
    /// `grad_probs` is the loss gradient with respect to the softmax output;
    /// the returned set aligns one-to-one with the layer list.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_probs: &Tensor4<T>) -> Result<ModelGrads<T>> {
        Ok(self.backward_with_input(cache, grad_probs)?.0)
    }

    /// [`NetworkWeights::backward`] plus the gradient with respect to the
    /// network input (used by the whole-network finite-difference check).
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        grad_probs: &Tensor4<T>,
    ) -> Result<(ModelGrads<T>, Tensor4<T>)> {
        if grad_probs.shape() != cache.probs.shape() {
            return Err(Error::shape(
                "backward grad_probs",
                format!("{:?}", cache.probs.shape()),
                format!("{:?}", grad_probs.shape()),
            ));
        }
        let mut grads: Vec<Option<LayerGrads<T>>> = (0..self.layers.len()).map(|_| None).collect();
        let mut skip_grads: Vec<Tensor4<T>> = Vec::new();
        let mut grad = grad_probs.clone();

        let mut layer_of_step: Vec<Option<usize>> = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            layer_of_step.push(match step {
                Step::Layer(i) => Some(*i),
                _ => None,
            });
        }

        for (step_idx, entry) in cache.entries.iter().enumerate().rev() {
            match entry {
                StepCache::Softmax => {
                    grad = softmax_backward(&cache.probs, &grad);
                }
                StepCache::ConcatSkip { left_channels } => {
                    let (g_main, g_skip) = grad.split_channels(*left_channels);
                    skip_grads.push(g_skip);
                    grad = g_main;
                }
                StepCache::PushSkip => {
                    let g_skip = skip_grads.pop().expect("skip gradients pair with pushes");
                    for (g, s) in grad.as_mut_slice().iter_mut().zip(g_skip.as_slice()) {
                        *g += *s;
                    }
                }
                StepCache::MaxPool(idx) => {
                    grad = maxpool2x2_backward(idx, &grad)?;
                }
                StepCache::Dropout(mask) => {
                    grad = dropout_backward(mask, &grad);
                }
                StepCache::Activation { input } => {
                    let act = match self.steps[step_idx] {
                        Step::Activation(a) => a,
                        _ => unreachable!("cache entries align with steps"),
                    };
                    grad = activation_backward(input, act, &grad);
                }
                StepCache::Conv { input } => {
                    let layer = layer_of_step[step_idx].expect("conv cache sits on a layer step");
                    let params = match &self.layers[layer].1 {
                        LayerParams::Conv(p) => p,
                        _ => unreachable!("layer kinds align with caches"),
                    };
                    let (g_in, g_params) = conv2d_backward(input, params, &grad)?;
                    grads[layer] = Some(LayerGrads::Conv {
                        weights: g_params.weights,
                        bias: g_params.bias,
                    });
                    grad = g_in;
                }
                StepCache::TransposedConv { input } => {
                    let layer = layer_of_step[step_idx].expect("tconv cache sits on a layer step");
                    let params = match &self.layers[layer].1 {
                        LayerParams::TransposedConv(p) => p,
                        _ => unreachable!("layer kinds align with caches"),
                    };
                    let (g_in, g_params) = transposed_conv2d_backward(input, params, &grad)?;
                    grads[layer] = Some(LayerGrads::TransposedConv {
                        weights: g_params.weights,
                        bias: g_params.bias,
                    });
                    grad = g_in;
                }
                StepCache::BatchNorm(bn_cache) => {
                    let layer = layer_of_step[step_idx].expect("bn cache sits on a layer step");
                    let params = match &self.layers[layer].1 {
                        LayerParams::BatchNorm(p) => p,
                        _ => unreachable!("layer kinds align with caches"),
                    };
                    let (g_in, g_gamma, g_beta) = batchnorm_backward(bn_cache, params, &grad)?;
                    grads[layer] = Some(LayerGrads::BatchNorm { gamma: g_gamma, beta: g_beta });
                    grad = g_in;
                }
            }
        }

        Ok((
            ModelGrads {
                layers: grads
                    .into_iter()
                    .map(|g| g.expect("every layer ran exactly once"))
                    .collect(),
            },
            grad,
        ))
    }

    /// Apply one ADAM update to every trainable tensor.
    pub fn apply_gradients(
        &mut self,
        grads: &ModelGrads<T>,
        states: &mut [Vec<AdamState<T>>],
        hyper: &AdamHyper,
    ) -> Result<()> {
        if grads.layers.len() != self.layers.len() || states.len() != self.layers.len() {
            return Err(Error::shape("apply_gradients", self.layers.len(), grads.layers.len()));
        }
        for ((layer, grad), state) in self.layers.iter_mut().zip(&grads.layers).zip(states.iter_mut()) {
            match (&mut layer.1, grad) {
                (LayerParams::Conv(p), LayerGrads::Conv { weights, bias }) => {
                    adam_step(p.weights.as_mut_slice(), weights.as_slice(), &mut state[0], hyper)?;
                    adam_step(&mut p.bias, bias, &mut state[1], hyper)?;
                }
                (LayerParams::TransposedConv(p), LayerGrads::TransposedConv { weights, bias }) => {
                    adam_step(p.weights.as_mut_slice(), weights.as_slice(), &mut state[0], hyper)?;
                    adam_step(&mut p.bias, bias, &mut state[1], hyper)?;
                }
                (LayerParams::BatchNorm(p), LayerGrads::BatchNorm { gamma, beta }) => {
                    adam_step(&mut p.gamma, gamma, &mut state[0], hyper)?;
                    adam_step(&mut p.beta, beta, &mut state[1], hyper)?;
                }
                _ => {
                    return Err(Error::LayerMismatch(format!(
                        "gradient kind does not match layer {}",
                        layer.0
                    )))
                }
            }
        }
        Ok(())
    }

    /// Fresh optimizer state, two tensors per layer (weights+bias or
    /// gamma+beta).
    pub fn fresh_adam_states(&self) -> Vec<Vec<AdamState<T>>> {
        self.layers
            .iter()
            .map(|(_, params)| match params {
                LayerParams::Conv(p) => vec![AdamState::new(p.weights.len()), AdamState::new(p.bias.len())],
                LayerParams::TransposedConv(p) => {
                    vec![AdamState::new(p.weights.len()), AdamState::new(p.bias.len())]
                }
                LayerParams::BatchNorm(p) => {
                    vec![AdamState::new(p.gamma.len()), AdamState::new(p.beta.len())]
                }
            })
            .collect()
    }

    /// Degenerate predictor for fixtures: zero the classification head's
    /// weights and push one class's bias up, so every pixel gets `class`
    /// with near-certainty regardless of the input.
    pub fn bias_head_towards(&mut self, class: usize, magnitude: T) {
        for (name, params) in self.layers.iter_mut() {
            if name == "head_conv" {
                if let LayerParams::Conv(p) = params {
                    for v in p.weights.as_mut_slice() {
                        *v = T::zero();
                    }
                    for (i, b) in p.bias.iter_mut().enumerate() {
                        *b = if i == class { magnitude } else { -magnitude };
                    }
                }
            }
        }
    }

    pub fn param_report(&self) -> ParamReport {
        let rows: Vec<ParamRow> = self
            .layers
            .iter()
            .map(|(name, params)| {
                let shape = match params {
                    LayerParams::Conv(p) => {
                        let (o, i, kh, kw) = p.weights.shape();
                        vec![o, i, kh, kw]
                    }
                    LayerParams::TransposedConv(p) => {
                        let (i, o, kh, kw) = p.weights.shape();
                        vec![i, o, kh, kw]
                    }
                    LayerParams::BatchNorm(p) => vec![p.channels()],
                };
                ParamRow {
                    name: name.clone(),
                    kind: params.kind(),
                    shape,
                    trainable: params.trainable_count(),
                    total: params.total_count(),
                }
            })
            .collect();
        let trainable_total = rows.iter().map(|r| r.trainable).sum();
        let total = rows.iter().map(|r| r.total).sum();
        ParamReport {
            rows,
            trainable_total,
            total,
        }
    }
}

/// One line of the per-layer parameter table.
#[derive(Debug, Clone)]
pub struct ParamRow {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    pub trainable: usize,
    /// Trainable elements plus non-trainable moving statistics.
    pub total: usize,
}

/// Per-layer parameter table with trainable and total sums.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
    pub trainable_total: usize,
    pub total: usize,
}

impl std::fmt::Display for ParamReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<18} {:<15} {:<14} {:>10} {:>10}", "layer", "kind", "shape", "trainable", "total")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<18} {:<15} {:<14} {:>10} {:>10}",
                row.name,
                format!("{:?}", row.kind),
                format!("{:?}", row.shape),
                row.trainable,
                row.total
            )?;
        }
        writeln!(f, "{:<48} {:>10} {:>10}", "sum", self.trainable_total, self.total)
    }
}
