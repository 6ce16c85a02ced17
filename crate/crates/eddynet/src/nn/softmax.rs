//! Per-pixel softmax across the channel axis, stabilized by max subtraction.

use rayon::prelude::*;

use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Map logits to per-pixel class probabilities. Each spatial position's
/// channel vector sums to one.
pub fn softmax_channels<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = input.shape();
    let mut out = input.clone();
    let plane = h * w;
    // one task per batch item; channels for a pixel sit `plane` apart
    out.as_mut_slice()
        .par_chunks_mut(c * plane)
        .for_each(|item| {
            for px in 0..plane {
                let mut m = item[px];
                for ch in 1..c {
                    let v = item[ch * plane + px];
                    if v > m {
                        m = v;
                    }
                }
                let mut denom = T::zero();
                for ch in 0..c {
                    let e = (item[ch * plane + px] - m).exp();
                    item[ch * plane + px] = e;
                    denom += e;
                }
                for ch in 0..c {
                    item[ch * plane + px] /= denom;
                }
            }
        });
    let _ = n;
    out
}

/// Pull a gradient in probability space back to logit space:
/// `dz_c = p_c * (dp_c - sum_k p_k dp_k)`.
pub fn softmax_backward<T: Scalar>(probs: &Tensor4<T>, grad_probs: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(probs.shape(), grad_probs.shape());
    let (_, c, h, w) = probs.shape();
    let plane = h * w;
    let mut out = grad_probs.clone();
    out.as_mut_slice()
        .par_chunks_mut(c * plane)
        .zip(probs.as_slice().par_chunks(c * plane))
        .for_each(|(item, p)| {
            for px in 0..plane {
                let mut dot = T::zero();
                for ch in 0..c {
                    dot += p[ch * plane + px] * item[ch * plane + px];
                }
                for ch in 0..c {
                    let i = ch * plane + px;
                    item[i] = p[i] * (item[i] - dot);
                }
            }
        });
    out
}
