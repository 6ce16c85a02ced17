//! Dropout and the SELU-preserving alpha variant.
//!
//! Masks come from an explicit seeded generator, never hidden state, so a
//! fixed seed reproduces the exact same mask. Inference is the identity.

use rand::Rng;

use super::activation::{SELU_ALPHA, SELU_LAMBDA};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    Train,
    Infer,
}

/// The Bernoulli keep mask plus the slope applied to kept units; enough to
/// replay the layer's Jacobian in the backward pass. `None` when the layer
/// ran as the identity (inference or rate 0).
#[derive(Debug, Clone)]
pub struct DropoutMask<T> {
    keep: Vec<bool>,
    kept_slope: T,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Standard dropout: zero each unit with probability `rate`, scale survivors
/// by `1/(1-rate)` so the expected activation is unchanged.
pub fn dropout<T: Scalar>(
    input: &Tensor4<T>,
    rate: f64,
    rng: &mut impl Rng,
    mode: DropMode,
) -> Result<(Tensor4<T>, Option<DropoutMask<T>>)> {
    check_rate(rate)?;
    if mode == DropMode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let scale = T::lit(1.0 / (1.0 - rate));
    let keep: Vec<bool> = (0..input.len()).map(|_| rng.gen::<f64>() >= rate).collect();
    let mut out = input.clone();
    for (v, &k) in out.as_mut_slice().iter_mut().zip(&keep) {
        *v = if k { *v * scale } else { T::zero() };
    }
    Ok((out, Some(DropoutMask { keep, kept_slope: scale })))
}

/// Alpha dropout: dropped units go to the SELU negative saturation value and
/// an affine correction restores zero mean / unit variance for standardized
/// inputs.
pub fn alpha_dropout<T: Scalar>(
    input: &Tensor4<T>,
    rate: f64,
    rng: &mut impl Rng,
    mode: DropMode,
) -> Result<(Tensor4<T>, Option<DropoutMask<T>>)> {
    check_rate(rate)?;
    if mode == DropMode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_prob = 1.0 - rate;
    let alpha_p = -SELU_LAMBDA * SELU_ALPHA;
    let a = (keep_prob + alpha_p * alpha_p * keep_prob * rate).powf(-0.5);
    let b = -a * alpha_p * rate;
    let (av, bv, dropped) = (T::lit(a), T::lit(b), T::lit(a * alpha_p + b));

    let keep: Vec<bool> = (0..input.len()).map(|_| rng.gen::<f64>() >= rate).collect();
    let mut out = input.clone();
    for (v, &k) in out.as_mut_slice().iter_mut().zip(&keep) {
        *v = if k { av * *v + bv } else { dropped };
    }
    Ok((out, Some(DropoutMask { keep, kept_slope: av })))
}

/// Shared backward: kept units pass `grad * slope`, dropped units block.
pub fn dropout_backward<T: Scalar>(mask: &Option<DropoutMask<T>>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let mut out = grad_out.clone();
            for (g, &k) in out.as_mut_slice().iter_mut().zip(&m.keep) {
                *g = if k { *g * m.kept_slope } else { T::zero() };
            }
            out
        }
    }
}
