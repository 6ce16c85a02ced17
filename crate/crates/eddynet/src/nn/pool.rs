//! 2x2 max pooling with argmax bookkeeping for the backward pass.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Flat input index of each pooled maximum, plus the input shape needed to
/// rebuild the gradient. Ties go to the first element in row-major window
/// order. `min_gap` records the smallest winner/runner-up spread seen, which
/// the gradient checker uses to detect near-ties.
#[derive(Debug, Clone)]
pub struct MaxPoolIndices {
    input_shape: (usize, usize, usize, usize),
    argmax: Vec<u32>,
    min_gap: f64,
}

impl MaxPoolIndices {
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }
}

/// Halve the spatial resolution; `h` and `w` must be even (the architecture
/// only pools sizes that are multiples of the stage count's power of two).
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, MaxPoolIndices)> {
    let (n, c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("maxpool2x2", "even height and width", format!("{h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let mut argmax = vec![0u32; n * c * oh * ow];

    let gaps: Vec<f64> = out
        .as_mut_slice()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .map(|(plane_idx, (out_plane, arg_plane))| {
            let plane_base = plane_idx * h * w;
            let bn = plane_idx / c;
            let ch = plane_idx % c;
            let in_plane = input.plane(bn, ch);
            let mut plane_gap = f64::INFINITY;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = in_plane[2 * y * w + 2 * x];
                    let mut best_off = 2 * y * w + 2 * x;
                    let mut second = T::neg_infinity();
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let off = (2 * y + dy) * w + 2 * x + dx;
                        let v = in_plane[off];
                        if v > best {
                            second = best;
                            best = v;
                            best_off = off;
                        } else if v > second {
                            second = v;
                        }
                    }
                    // exact ties (e.g. structural zeros after ReLU or a shared
                    // dropout constant) resolve deterministically and stay
                    // tied under perturbation; only strict near-ties matter
                    if best > second {
                        plane_gap = plane_gap.min((best - second).as_f64());
                    }
                    out_plane[y * ow + x] = best;
                    arg_plane[y * ow + x] = (plane_base + best_off) as u32;
                }
            }
            plane_gap
        })
        .collect();

    Ok((
        out,
        MaxPoolIndices {
            input_shape: (n, c, h, w),
            argmax,
            min_gap: gaps.into_iter().fold(f64::INFINITY, f64::min),
        },
    ))
}

/// Route each output gradient to the input position that won its window.
pub fn maxpool2x2_backward<T: Scalar>(indices: &MaxPoolIndices, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (n, c, h, w) = indices.input_shape;
    if grad_out.shape() != (n, c, h / 2, w / 2) {
        return Err(Error::shape(
            "maxpool2x2_backward grad_out",
            format!("{:?}", (n, c, h / 2, w / 2)),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_input = Tensor4::zeros(n, c, h, w);
    let gi = grad_input.as_mut_slice();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.as_slice()) {
        gi[idx as usize] += g;
    }
    Ok(grad_input)
}
