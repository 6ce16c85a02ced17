//! Central finite-difference verification of every analytic gradient.
//!
//! Each case builds a small problem in f64, reduces the checked operation's
//! output to a scalar through a fixed random projection, and compares the
//! analytic backward pass against `(L(v+h) - L(v-h)) / 2h` coordinate by
//! coordinate. Everything runs in double precision; at `h = 1e-3` the
//! difference quotient carries ~1e-6 truncation error, far below the 1e-4
//! gate.
//!
//! Piecewise operations need their probes away from branch points: the
//! activation cases sample inputs with a minimum magnitude, the pooling case
//! uses values with distinct, well-separated window entries, and the
//! whole-network cases advance the build seed until every activation input
//! and pooling margin clears ten probe steps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::{activation_backward, activation_forward, Activation};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, BnMode};
use super::conv::{conv2d_backward, conv2d_forward};
use super::dropout::{alpha_dropout, dropout, dropout_backward, DropMode};
use super::params::{BatchNormParams, ConvParams, LayerParams, TransposedConvParams};
use super::pool::{maxpool2x2_backward, maxpool2x2_forward};
use super::softmax::{softmax_backward, softmax_channels};
use super::transposed::{transposed_conv2d_backward, transposed_conv2d_forward};
use crate::data::SegmentationMask;
use crate::error::{Error, Result};
use crate::loss::{categorical_cross_entropy, dice_loss, OneHotTarget};
use crate::model::{build_model, EddyNetConfig, LayerGrads, NetworkWeights, Variant};
use crate::tensor::Tensor4;

/// Central-difference step for the per-layer checks.
pub const FD_STEP: f64 = 1e-3;
/// Central-difference step for the whole-network spot check. A composed
/// network holds hundreds of piecewise units whose inputs cluster near zero
/// (batch norm centers them), so the probe must be small enough that no
/// branch flips; in f64 the quotient stays far more accurate than the gate.
pub const NETWORK_FD_STEP: f64 = 1e-5;
/// Relative-error gate for layer kernels and losses.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Relative-error gate for the whole-network spot check.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Floor for the relative-error denominator in the per-layer checks.
pub const FD_GUARD: f64 = 1e-8;
/// Denominator floor for the whole-network check. Its difference quotients
/// carry a roundoff floor of about `eps * |L| / (2h)` (~1e-10 here), so
/// coordinates whose true gradient sits below 1e-6 are indistinguishable
/// from zero and must not dominate the relative error.
pub const NETWORK_FD_GUARD: f64 = 1e-6;

/// Outcome of one case (worst coordinate over all seeds run).
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub case: String,
    pub seeds: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// A flattened differentiable problem: a scalar loss over `values` plus its
/// analytic gradient.
struct CheckProblem {
    values: Vec<f64>,
    step: f64,
    guard: f64,
    loss: Box<dyn Fn(&[f64]) -> f64>,
    analytic: Box<dyn Fn(&[f64]) -> Vec<f64>>,
}

fn relative_error(fd: f64, an: f64, guard: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(guard)
}

fn run_problem(problem: &CheckProblem) -> f64 {
    let analytic = (problem.analytic)(&problem.values);
    assert_eq!(analytic.len(), problem.values.len(), "gradient length mismatch");
    let mut values = problem.values.clone();
    let h = problem.step;
    let mut worst = 0.0f64;
    for j in 0..values.len() {
        let orig = values[j];
        values[j] = orig + h;
        let up = (problem.loss)(&values);
        values[j] = orig - h;
        let down = (problem.loss)(&values);
        values[j] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(fd, analytic[j], problem.guard));
    }
    worst
}

fn tensor_from(values: &[f64], shape: (usize, usize, usize, usize)) -> Tensor4<f64> {
    Tensor4::from_vec(shape.0, shape.1, shape.2, shape.3, values.to_vec()).expect("split sizes match shapes")
}

fn projection(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Tensor4<f64> {
    let len = shape.0 * shape.1 * shape.2 * shape.3;
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor4::from_vec(shape.0, shape.1, shape.2, shape.3, data).expect("generated length matches")
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Magnitudes in [0.2, 1.5] with random signs: clear of activation kinks even
/// after the probe step.
fn kink_free_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.5);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn conv_problem(seed: u64, k: usize) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_shape = (2, 3, 6, 6);
    let w_shape = (4, 3, k, k);
    let (in_len, w_len) = (2 * 3 * 36, 4 * 3 * k * k);
    let values: Vec<f64> = random_values(&mut rng, in_len + w_len + 4);
    let r = projection(&mut rng, (2, 4, 6, 6));

    let split = move |v: &[f64]| {
        let input = tensor_from(&v[..in_len], in_shape);
        let weights = tensor_from(&v[in_len..in_len + w_len], w_shape);
        let bias = v[in_len + w_len..].to_vec();
        (input, ConvParams::new(weights, bias).expect("valid kernel"))
    };
    let r2 = r.clone();
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| {
            let (input, params) = split(v);
            dot(&conv2d_forward(&input, &params).expect("shapes fixed"), &r)
        }),
        analytic: Box::new(move |v| {
            let (input, params) = split(v);
            let (gi, gp) = conv2d_backward(&input, &params, &r2).expect("shapes fixed");
            let mut out = gi.into_vec();
            out.extend(gp.weights.into_vec());
            out.extend(gp.bias);
            out
        }),
    }
}

fn transposed_problem(seed: u64, k: usize) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_shape = (1, 3, 4, 4);
    let w_shape = (3, 2, k, k);
    let (in_len, w_len) = (3 * 16, 3 * 2 * k * k);
    let values = random_values(&mut rng, in_len + w_len + 2);
    let r = projection(&mut rng, (1, 2, 8, 8));

    let split = move |v: &[f64]| {
        let input = tensor_from(&v[..in_len], in_shape);
        let weights = tensor_from(&v[in_len..in_len + w_len], w_shape);
        let bias = v[in_len + w_len..].to_vec();
        (input, TransposedConvParams::new(weights, bias).expect("valid kernel"))
    };
    let r2 = r.clone();
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| {
            let (input, params) = split(v);
            dot(&transposed_conv2d_forward(&input, &params).expect("shapes fixed"), &r)
        }),
        analytic: Box::new(move |v| {
            let (input, params) = split(v);
            let (gi, gp) = transposed_conv2d_backward(&input, &params, &r2).expect("shapes fixed");
            let mut out = gi.into_vec();
            out.extend(gp.weights.into_vec());
            out.extend(gp.bias);
            out
        }),
    }
}

fn maxpool_problem(seed: u64) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (1, 2, 6, 6);
    // distinct values separated by 0.05: no window comes close to a tie
    let mut values: Vec<f64> = (0..72).map(|i| i as f64 * 0.05 - 1.8).collect();
    values.shuffle(&mut rng);
    let r = projection(&mut rng, (1, 2, 3, 3));
    let r2 = r.clone();
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| {
            let (out, _) = maxpool2x2_forward(&tensor_from(v, shape)).expect("even sizes");
            dot(&out, &r)
        }),
        analytic: Box::new(move |v| {
            let (_, idx) = maxpool2x2_forward(&tensor_from(v, shape)).expect("even sizes");
            maxpool2x2_backward(&idx, &r2).expect("shapes fixed").into_vec()
        }),
    }
}

fn batchnorm_problem(seed: u64) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (4, 3, 5, 5);
    let in_len = 4 * 3 * 25;
    let mut values = random_values(&mut rng, in_len);
    values.extend((0..3).map(|_| rng.gen_range(0.5..1.5))); // gamma
    values.extend((0..3).map(|_| rng.gen_range(-0.5..0.5))); // beta
    let r = projection(&mut rng, shape);
    let r2 = r.clone();

    let split = move |v: &[f64]| {
        let input = tensor_from(&v[..in_len], shape);
        let mut params = BatchNormParams::<f64>::new(3);
        params.gamma = v[in_len..in_len + 3].to_vec();
        params.beta = v[in_len + 3..].to_vec();
        (input, params)
    };
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| {
            let (input, mut params) = split(v);
            let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).expect("shapes fixed");
            dot(&out, &r)
        }),
        analytic: Box::new(move |v| {
            let (input, mut params) = split(v);
            let (_, cache) = batchnorm_forward(&input, &mut params, BnMode::Train).expect("shapes fixed");
            let (gi, dgamma, dbeta) =
                batchnorm_backward(&cache.expect("train mode caches"), &params, &r2).expect("shapes fixed");
            let mut out = gi.into_vec();
            out.extend(dgamma);
            out.extend(dbeta);
            out
        }),
    }
}

fn activation_problem(seed: u64, act: Activation) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (2, 2, 4, 4);
    let values = kink_free_values(&mut rng, 64);
    let r = projection(&mut rng, shape);
    let r2 = r.clone();
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| dot(&activation_forward(&tensor_from(v, shape), act), &r)),
        analytic: Box::new(move |v| activation_backward(&tensor_from(v, shape), act, &r2).into_vec()),
    }
}

fn dropout_problem(seed: u64, alpha: bool) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (1, 2, 6, 6);
    let values = random_values(&mut rng, 72);
    let r = projection(&mut rng, shape);
    let r2 = r.clone();
    // mask depends only on this seed, never on the probed values
    let mask_seed = seed ^ 0x5eed;
    let run = move |v: &[f64]| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let input = tensor_from(v, shape);
        if alpha {
            alpha_dropout(&input, 0.3, &mut mask_rng, DropMode::Train).expect("valid rate")
        } else {
            dropout(&input, 0.3, &mut mask_rng, DropMode::Train).expect("valid rate")
        }
    };
    let run2 = run;
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| dot(&run2(v).0, &r)),
        analytic: Box::new(move |v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let input = tensor_from(v, shape);
            let (_, mask) = if alpha {
                alpha_dropout(&input, 0.3, &mut mask_rng, DropMode::Train).expect("valid rate")
            } else {
                dropout(&input, 0.3, &mut mask_rng, DropMode::Train).expect("valid rate")
            };
            dropout_backward(&mask, &r2).into_vec()
        }),
    }
}

fn softmax_problem(seed: u64) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (2, 3, 4, 4);
    let values: Vec<f64> = (0..96).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let r = projection(&mut rng, shape);
    let r2 = r.clone();
    CheckProblem {
        values,
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| dot(&softmax_channels(&tensor_from(v, shape)), &r)),
        analytic: Box::new(move |v| {
            let probs = softmax_channels(&tensor_from(v, shape));
            softmax_backward(&probs, &r2).into_vec()
        }),
    }
}

/// Interior probabilities plus a random mask; checks the loss gradient with
/// respect to the probabilities.
fn loss_problem(seed: u64, cce: bool) -> CheckProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (1, 3, 4, 4);
    // softmax of small logits keeps every probability above ~0.11: the
    // central difference of -ln(p) truncates like h^2/(3 p^2), so larger
    // probabilities keep the quotient well under the 1e-4 gate
    let logits: Vec<f64> = (0..48).map(|_| rng.gen_range(-0.7..0.7)).collect();
    let probs = softmax_channels(&tensor_from(&logits, shape));
    assert!(probs.as_slice().iter().all(|&p| p > 0.1));
    let labels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..3)).collect();
    let mask = SegmentationMask::from_labels(4, 4, labels).expect("labels in range");
    let target = OneHotTarget::<f64>::from_masks(&[&mask]).expect("one mask");
    let target2 = target.clone();

    CheckProblem {
        values: probs.as_slice().to_vec(),
        step: FD_STEP,
        guard: FD_GUARD,
        loss: Box::new(move |v| {
            let p = tensor_from(v, shape);
            if cce {
                categorical_cross_entropy(&p, &target).expect("shapes fixed").0
            } else {
                dice_loss(&p, &target).expect("shapes fixed").0
            }
        }),
        analytic: Box::new(move |v| {
            let p = tensor_from(v, shape);
            let grad = if cce {
                categorical_cross_entropy(&p, &target2).expect("shapes fixed").1
            } else {
                dice_loss(&p, &target2).expect("shapes fixed").1
            };
            grad.into_vec()
        }),
    }
}

fn flatten_trainable(weights: &NetworkWeights<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, params) in weights.layers() {
        match params {
            LayerParams::Conv(p) => {
                out.extend_from_slice(p.weights.as_slice());
                out.extend_from_slice(&p.bias);
            }
            LayerParams::TransposedConv(p) => {
                out.extend_from_slice(p.weights.as_slice());
                out.extend_from_slice(&p.bias);
            }
            LayerParams::BatchNorm(p) => {
                out.extend_from_slice(&p.gamma);
                out.extend_from_slice(&p.beta);
            }
        }
    }
    out
}

fn load_trainable(weights: &mut NetworkWeights<f64>, values: &[f64]) {
    let mut pos = 0;
    for (_, params) in weights.layers_mut().iter_mut() {
        match params {
            LayerParams::Conv(p) => {
                let n = p.weights.len();
                p.weights.as_mut_slice().copy_from_slice(&values[pos..pos + n]);
                pos += n;
                let b = p.bias.len();
                p.bias.copy_from_slice(&values[pos..pos + b]);
                pos += b;
            }
            LayerParams::TransposedConv(p) => {
                let n = p.weights.len();
                p.weights.as_mut_slice().copy_from_slice(&values[pos..pos + n]);
                pos += n;
                let b = p.bias.len();
                p.bias.copy_from_slice(&values[pos..pos + b]);
                pos += b;
            }
            LayerParams::BatchNorm(p) => {
                let c = p.gamma.len();
                p.gamma.copy_from_slice(&values[pos..pos + c]);
                pos += c;
                p.beta.copy_from_slice(&values[pos..pos + c]);
                pos += c;
            }
        }
    }
    assert_eq!(pos, values.len(), "trainable layout mismatch");
}

fn flatten_grads(grads: &[LayerGrads<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        match g {
            LayerGrads::Conv { weights, bias } | LayerGrads::TransposedConv { weights, bias } => {
                out.extend_from_slice(weights.as_slice());
                out.extend_from_slice(bias);
            }
            LayerGrads::BatchNorm { gamma, beta } => {
                out.extend_from_slice(gamma);
                out.extend_from_slice(beta);
            }
        }
    }
    out
}

/// Whole-network spot check on a 1-stage, 2-filter, 8x8 build, probing the
/// input and every trainable parameter.
fn network_problem(seed: u64, variant: Variant) -> Result<CheckProblem> {
    let config = EddyNetConfig {
        variant,
        stages: 1,
        filters: 2,
        dropout_rate: 0.2,
        input_size: (8, 8),
        ..EddyNetConfig::default()
    };
    let margin = 10.0 * NETWORK_FD_STEP;
    for attempt in 0..64u64 {
        let s = seed.wrapping_add(attempt);
        let mut build_rng = ChaCha8Rng::seed_from_u64(s);
        let mut weights = build_model::<f64>(&config, &mut build_rng)?;
        let mut data_rng = ChaCha8Rng::seed_from_u64(s ^ 0xdada);
        let input_values: Vec<f64> = (0..64).map(|_| data_rng.gen_range(-1.0..1.0)).collect();
        let input = tensor_from(&input_values, (1, 1, 8, 8));
        let mask_seed = s ^ 0xd09;
        let (probs, cache) = weights.forward_train(&input, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
        if cache.kink_margin() <= margin {
            continue;
        }
        let r = projection(&mut data_rng, probs.shape());
        let r2 = r.clone();
        let in_len = 64;
        let base = weights.clone();
        let base2 = weights.clone();
        let mut values = input_values;
        values.extend(flatten_trainable(&weights));
        return Ok(CheckProblem {
            values,
            step: NETWORK_FD_STEP,
            guard: NETWORK_FD_GUARD,
            loss: Box::new(move |v| {
                let mut w = base.clone();
                load_trainable(&mut w, &v[in_len..]);
                let input = tensor_from(&v[..in_len], (1, 1, 8, 8));
                let (probs, _) = w
                    .forward_train(&input, &mut ChaCha8Rng::seed_from_u64(mask_seed))
                    .expect("fixed shapes");
                dot(&probs, &r)
            }),
            analytic: Box::new(move |v| {
                let mut w = base2.clone();
                load_trainable(&mut w, &v[in_len..]);
                let input = tensor_from(&v[..in_len], (1, 1, 8, 8));
                let (_, cache) = w
                    .forward_train(&input, &mut ChaCha8Rng::seed_from_u64(mask_seed))
                    .expect("fixed shapes");
                let (grads, grad_input) = w.backward_with_input(&cache, &r2).expect("fixed shapes");
                let mut out = grad_input.into_vec();
                out.extend(flatten_grads(&grads.layers));
                out
            }),
        });
    }
    Err(Error::InvalidConfig(format!(
        "no kink-free configuration found near seed {seed} for {variant:?}"
    )))
}


/// Names of all layer-level cases.
pub fn layer_cases() -> &'static [&'static str] {
    &[
        "conv3x3",
        "conv1x1",
        "transposed_conv_2x2",
        "transposed_conv_3x3",
        "maxpool2x2",
        "batchnorm",
        "relu",
        "selu",
        "dropout",
        "alpha_dropout",
        "softmax_channels",
        "dice_loss",
        "cross_entropy",
    ]
}

/// Names of the whole-network spot checks.
pub fn network_cases() -> &'static [&'static str] {
    &["network_relu_bn", "network_selu"]
}

fn build_case(name: &str, seed: u64) -> Result<CheckProblem> {
    match name {
        "conv3x3" => Ok(conv_problem(seed, 3)),
        "conv1x1" => Ok(conv_problem(seed, 1)),
        "transposed_conv_2x2" => Ok(transposed_problem(seed, 2)),
        "transposed_conv_3x3" => Ok(transposed_problem(seed, 3)),
        "maxpool2x2" => Ok(maxpool_problem(seed)),
        "batchnorm" => Ok(batchnorm_problem(seed)),
        "relu" => Ok(activation_problem(seed, Activation::Relu)),
        "selu" => Ok(activation_problem(seed, Activation::Selu)),
        "dropout" => Ok(dropout_problem(seed, false)),
        "alpha_dropout" => Ok(dropout_problem(seed, true)),
        "softmax_channels" => Ok(softmax_problem(seed)),
        "dice_loss" => Ok(loss_problem(seed, false)),
        "cross_entropy" => Ok(loss_problem(seed, true)),
        "network_relu_bn" => network_problem(seed, Variant::ReluBn),
        "network_selu" => network_problem(seed, Variant::Selu),
        other => Err(Error::InvalidConfig(format!("unknown gradient-check case {other:?}"))),
    }
}

fn case_tolerance(name: &str) -> f64 {
    if name.starts_with("network") {
        NETWORK_TOLERANCE
    } else {
        FD_TOLERANCE
    }
}

/// Run one case over `seeds` consecutive seeds starting at `base_seed`,
/// reporting the worst coordinate.
pub fn grad_check(name: &str, base_seed: u64, seeds: usize) -> Result<GradCheckReport> {
    let tolerance = case_tolerance(name);
    let mut worst = 0.0f64;
    for s in 0..seeds as u64 {
        let problem = build_case(name, base_seed.wrapping_add(s.wrapping_mul(7919)))?;
        worst = worst.max(run_problem(&problem));
    }
    Ok(GradCheckReport {
        case: name.to_string(),
        seeds,
        max_relative_error: worst,
        tolerance,
        pass: worst < tolerance,
    })
}

/// The full verification sweep: every layer case at `seeds_per_case`, plus
/// both whole-network spot checks at 2 seeds each.
pub fn full_suite(base_seed: u64, seeds_per_case: usize) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for name in layer_cases() {
        out.push(grad_check(name, base_seed, seeds_per_case)?);
    }
    for name in network_cases() {
        out.push(grad_check(name, base_seed, 2)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv3x3_passes() {
        let report = grad_check("conv3x3", 100, 3).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn batchnorm_train_mode_passes() {
        let report = grad_check("batchnorm", 200, 3).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn maxpool_on_tie_free_input_passes() {
        let report = grad_check("maxpool2x2", 300, 3).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn losses_pass() {
        for case in ["dice_loss", "cross_entropy"] {
            let report = grad_check(case, 400, 3).unwrap();
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn whole_network_spot_checks_pass() {
        for case in ["network_relu_bn", "network_selu"] {
            let report = grad_check(case, 500, 1).unwrap();
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn unknown_case_is_rejected() {
        assert!(grad_check("nope", 0, 1).is_err());
    }
}
