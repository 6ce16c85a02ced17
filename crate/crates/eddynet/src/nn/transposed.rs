//! Stride-2 transposed convolution: the learnable upsampling operator.
//!
//! Defined as the adjoint of a stride-2 "same" convolution with the
//! transposed kernel, so an `h x w` input always maps to `2h x 2w`. With the
//! matched convolution `A`, `<A x, y> == <x, A^T y>` holds up to rounding.
//!
//! For kernel size `k` the matched convolution pads `k - 2` rows/columns at
//! the bottom/right edge only (the leading pad of a stride-2 "same"
//! convolution is `(k - 2) / 2`, which is zero for the supported k of 2
//! and 3). The scatter rule is therefore `out[2y+dy, 2x+dx] += in[y, x] *
//! w[dy, dx]`, clipped to the output extent.

use rayon::prelude::*;

use super::params::TransposedConvParams;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::tensor::Tensor4;

fn check_input<T: Scalar>(input: &Tensor4<T>, params: &TransposedConvParams<T>) -> Result<()> {
    if input.channels() != params.in_channels() {
        return Err(Error::shape(
            "transposed_conv2d input channels",
            format!(
                "input (*,{},*,*) for kernel {:?}",
                params.in_channels(),
                params.weights.shape()
            ),
            format!("{:?}", input.shape()),
        ));
    }
    Ok(())
}

/// Upsample by 2x: output shape `(n, out_channels, 2h, 2w)`.
pub fn transposed_conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &TransposedConvParams<T>,
) -> Result<Tensor4<T>> {
    check_input(input, params)?;
    let (n, c, h, w) = input.shape();
    let o = params.out_channels();
    let k = params.kernel();
    let (oh, ow) = (2 * h, 2 * w);
    let wt = &params.weights;

    let mut out = Tensor4::zeros(n, o, oh, ow);
    out.as_mut_slice()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let bn = plane_idx / o;
            let oc = plane_idx % o;
            out_plane.fill(params.bias[oc]);
            for ic in 0..c {
                let in_plane = input.plane(bn, ic);
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = wt.get(ic, oc, dy, dx);
                        for y in 0..h {
                            let oy = 2 * y + dy;
                            if oy >= oh {
                                break;
                            }
                            let row = &in_plane[y * w..(y + 1) * w];
                            let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                            for (x, &v) in row.iter().enumerate() {
                                let ox = 2 * x + dx;
                                if ox < ow {
                                    out_row[ox] += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`transposed_conv2d_forward`]. The input gradient is the
/// matched stride-2 convolution of `grad_out` with the same kernel.
pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &TransposedConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, TransposedConvParams<T>)> {
    check_input(input, params)?;
    let (n, c, h, w) = input.shape();
    let o = params.out_channels();
    let expected = (n, o, 2 * h, 2 * w);
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "transposed_conv2d_backward grad_out",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let k = params.kernel();
    let (oh, ow) = (2 * h, 2 * w);
    let wt = &params.weights;

    let grad_bias: Vec<T> = (0..o)
        .into_par_iter()
        .map(|oc| {
            let mut acc = T::zero();
            for bn in 0..n {
                acc += pairwise_sum(grad_out.plane(bn, oc));
            }
            acc
        })
        .collect();

    let mut grad_input = Tensor4::zeros(n, c, h, w);
    grad_input
        .as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let bn = plane_idx / c;
            let ic = plane_idx % c;
            for oc in 0..o {
                let go_plane = grad_out.plane(bn, oc);
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = wt.get(ic, oc, dy, dx);
                        for y in 0..h {
                            let oy = 2 * y + dy;
                            if oy >= oh {
                                break;
                            }
                            let go_row = &go_plane[oy * ow..(oy + 1) * ow];
                            let gi_row = &mut gi_plane[y * w..(y + 1) * w];
                            for (x, g) in gi_row.iter_mut().enumerate() {
                                let ox = 2 * x + dx;
                                if ox < ow {
                                    *g += wv * go_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        });

    let mut grad_weights = Tensor4::zeros(c, o, k, k);
    grad_weights
        .as_mut_slice()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(pair_idx, gw)| {
            let ic = pair_idx / o;
            let oc = pair_idx % o;
            for bn in 0..n {
                let in_plane = input.plane(bn, ic);
                let go_plane = grad_out.plane(bn, oc);
                for dy in 0..k {
                    for dx in 0..k {
                        let mut acc = T::zero();
                        for y in 0..h {
                            let oy = 2 * y + dy;
                            if oy >= oh {
                                break;
                            }
                            let row = &in_plane[y * w..(y + 1) * w];
                            let go_row = &go_plane[oy * ow..(oy + 1) * ow];
                            let mut row_acc = T::zero();
                            for (x, &v) in row.iter().enumerate() {
                                let ox = 2 * x + dx;
                                if ox < ow {
                                    row_acc += v * go_row[ox];
                                }
                            }
                            acc += row_acc;
                        }
                        gw[dy * k + dx] += acc;
                    }
                }
            }
        });

    Ok((
        grad_input,
        TransposedConvParams { weights: grad_weights, bias: grad_bias },
    ))
}
