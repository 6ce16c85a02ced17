//! Stride-1 "same" convolution, forward and backward.
//!
//! The network's output must keep the spatial size of its input, so every
//! convolution here zero-pads by `k/2` on each side. Kernels are square, 1x1
//! or 3x3. The inner loops accumulate shifted row segments so the compiler
//! can vectorize them; parallelism is over independent output planes, which
//! keeps results bit-identical for any thread count.

use rayon::prelude::*;

use super::params::ConvParams;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::tensor::Tensor4;

fn check_input<T: Scalar>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<()> {
    if input.channels() != params.in_channels() {
        return Err(Error::shape(
            "conv2d input channels",
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

/// `dst[y][x] += sum_{dy,dx in 0..3} w[dy*3+dx] * src[y+dy-1][x+dx-1]` over an
/// `h x w` plane with zero padding, one pass per plane. The interior loop is
/// nine fused multiply-adds per element, which the compiler vectorizes.
fn stencil3x3_accumulate<T: Scalar>(dst: &mut [T], src: &[T], w: &[T], h: usize, wd: usize, zero_row: &[T]) {
    for y in 0..h {
        let r0: &[T] = if y > 0 { &src[(y - 1) * wd..y * wd] } else { zero_row };
        let r1: &[T] = &src[y * wd..(y + 1) * wd];
        let r2: &[T] = if y + 1 < h { &src[(y + 1) * wd..(y + 2) * wd] } else { zero_row };
        let out = &mut dst[y * wd..(y + 1) * wd];

        // interior columns
        for x in 1..wd.saturating_sub(1) {
            let acc = w[0] * r0[x - 1]
                + w[1] * r0[x]
                + w[2] * r0[x + 1]
                + w[3] * r1[x - 1]
                + w[4] * r1[x]
                + w[5] * r1[x + 1]
                + w[6] * r2[x - 1]
                + w[7] * r2[x]
                + w[8] * r2[x + 1];
            out[x] += acc;
        }
        // edge columns with the left/right tap dropped
        let mut edge = |x: usize| {
            let mut acc = w[1] * r0[x] + w[4] * r1[x] + w[7] * r2[x];
            if x > 0 {
                acc += w[0] * r0[x - 1] + w[3] * r1[x - 1] + w[6] * r2[x - 1];
            }
            if x + 1 < wd {
                acc += w[2] * r0[x + 1] + w[5] * r1[x + 1] + w[8] * r2[x + 1];
            }
            out[x] += acc;
        };
        edge(0);
        if wd > 1 {
            edge(wd - 1);
        }
    }
}

/// The nine `sum_{y,x} go[y][x] * in[y+dy-1][x+dx-1]` correlations of one
/// plane pair, accumulated into `acc` in one pass. Nine named accumulators
/// keep the reduction chains independent and in registers.
#[allow(clippy::too_many_arguments)]
fn stencil3x3_weight_grads<T: Scalar>(acc: &mut [T], go: &[T], input: &[T], h: usize, wd: usize, zero_row: &[T]) {
    const LANES: usize = 4;
    let mut lanes = [[T::zero(); LANES]; 9];
    let (mut a0, mut a1, mut a2) = (T::zero(), T::zero(), T::zero());
    let (mut a3, mut a4, mut a5) = (T::zero(), T::zero(), T::zero());
    let (mut a6, mut a7, mut a8) = (T::zero(), T::zero(), T::zero());
    for y in 0..h {
        let r0: &[T] = if y > 0 { &input[(y - 1) * wd..y * wd] } else { zero_row };
        let r1: &[T] = &input[y * wd..(y + 1) * wd];
        let r2: &[T] = if y + 1 < h { &input[(y + 1) * wd..(y + 2) * wd] } else { zero_row };
        let g = &go[y * wd..(y + 1) * wd];
        // interior in blocks of four lanes so the nine reductions vectorize
        let hi = wd.saturating_sub(1);
        let mut x = 1;
        while x + LANES <= hi {
            for j in 0..LANES {
                let gv = g[x + j];
                lanes[0][j] += gv * r0[x + j - 1];
                lanes[1][j] += gv * r0[x + j];
                lanes[2][j] += gv * r0[x + j + 1];
                lanes[3][j] += gv * r1[x + j - 1];
                lanes[4][j] += gv * r1[x + j];
                lanes[5][j] += gv * r1[x + j + 1];
                lanes[6][j] += gv * r2[x + j - 1];
                lanes[7][j] += gv * r2[x + j];
                lanes[8][j] += gv * r2[x + j + 1];
            }
            x += LANES;
        }
        while x < hi {
            let gv = g[x];
            a0 += gv * r0[x - 1];
            a1 += gv * r0[x];
            a2 += gv * r0[x + 1];
            a3 += gv * r1[x - 1];
            a4 += gv * r1[x];
            a5 += gv * r1[x + 1];
            a6 += gv * r2[x - 1];
            a7 += gv * r2[x];
            a8 += gv * r2[x + 1];
            x += 1;
        }
        // left edge
        {
            let gv = g[0];
            a1 += gv * r0[0];
            a4 += gv * r1[0];
            a7 += gv * r2[0];
            if wd > 1 {
                a2 += gv * r0[1];
                a5 += gv * r1[1];
                a8 += gv * r2[1];
            }
        }
        // right edge
        if wd > 1 {
            let x = wd - 1;
            let gv = g[x];
            a0 += gv * r0[x - 1];
            a1 += gv * r0[x];
            a3 += gv * r1[x - 1];
            a4 += gv * r1[x];
            a6 += gv * r2[x - 1];
            a7 += gv * r2[x];
        }
    }
    let scalars = [a0, a1, a2, a3, a4, a5, a6, a7, a8];
    for (k, dst) in acc.iter_mut().enumerate() {
        let mut total = scalars[k];
        for j in 0..LANES {
            total += lanes[k][j];
        }
        *dst += total;
    }
}

/// `out[n,o,y,x] = bias[o] + sum_{i,ky,kx} in[n,i,y+ky-p,x+kx-p] * w[o,i,ky,kx]`
/// with zero padding `p = k/2`; output spatial size equals the input's.
pub fn conv2d_forward<T: Scalar>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    check_input(input, params)?;
    let (n, c, h, w) = input.shape();
    let o = params.out_channels();
    let k = params.kernel();
    let p = k / 2;

    let mut out = Tensor4::zeros(n, o, h, w);
    let wt = &params.weights;
    let zero_row = vec![T::zero(); w];
    let _ = p;
    out.as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let bn = plane_idx / o;
            let oc = plane_idx % o;
            out_plane.fill(params.bias[oc]);
            if k == 3 {
                for ic in 0..c {
                    let base = wt.idx(oc, ic, 0, 0);
                    let w9 = &wt.as_slice()[base..base + 9];
                    stencil3x3_accumulate(out_plane, input.plane(bn, ic), w9, h, w, &zero_row);
                }
            } else {
                for ic in 0..c {
                    let wv = wt.get(oc, ic, 0, 0);
                    for (d, s) in out_plane.iter_mut().zip(input.plane(bn, ic)) {
                        *d += wv * *s;
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvParams<T>)> {
    check_input(input, params)?;
    let (n, c, h, w) = input.shape();
    let o = params.out_channels();
    let expected = (n, o, h, w);
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward grad_out", format!("{expected:?}"), format!("{:?}", grad_out.shape())));
    }
    let k = params.kernel();
    let p = k / 2;
    let wt = &params.weights;

    // dL/dbias[o] = sum over (n, y, x) of grad_out
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

    // dL/dinput: the same stencil with the kernel reflected in both axes
    let zero_row = vec![T::zero(); w];
    let mut grad_input = Tensor4::zeros(n, c, h, w);
    grad_input
        .as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let bn = plane_idx / c;
            let ic = plane_idx % c;
            if k == 3 {
                for oc in 0..o {
                    let base = wt.idx(oc, ic, 0, 0);
                    let w9 = &wt.as_slice()[base..base + 9];
                    let flipped = [w9[8], w9[7], w9[6], w9[5], w9[4], w9[3], w9[2], w9[1], w9[0]];
                    stencil3x3_accumulate(gi_plane, grad_out.plane(bn, oc), &flipped, h, w, &zero_row);
                }
            } else {
                for oc in 0..o {
                    let wv = wt.get(oc, ic, 0, 0);
                    for (d, s) in gi_plane.iter_mut().zip(grad_out.plane(bn, oc)) {
                        *d += wv * *s;
                    }
                }
            }
        });

    // dL/dw[o,i,ky,kx] = sum over (n, y, x) of go[n,o,y,x] * in[n,i,y+ky-p,x+kx-p]
    let _ = p;
    let mut grad_weights = Tensor4::zeros(o, c, k, k);
    grad_weights
        .as_mut_slice()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(pair_idx, gw)| {
            let oc = pair_idx / c;
            let ic = pair_idx % c;
            for bn in 0..n {
                let go_plane = grad_out.plane(bn, oc);
                let in_plane = input.plane(bn, ic);
                if k == 3 {
                    stencil3x3_weight_grads(gw, go_plane, in_plane, h, w, &zero_row);
                } else {
                    let mut acc = T::zero();
                    for (u, v) in go_plane.iter().zip(in_plane) {
                        acc += *u * *v;
                    }
                    gw[0] += acc;
                }
            }
        });

    Ok((grad_input, ConvParams { weights: grad_weights, bias: grad_bias }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force direct-summation reference: six nested loops in f64,
    /// written before the optimized kernel and kept independent of it.
    pub(crate) fn conv2d_reference(input: &Tensor4<f64>, weights: &Tensor4<f64>, bias: &[f64]) -> Tensor4<f64> {
        let (n, c, h, w) = input.shape();
        let (o, _, k, _) = weights.shape();
        let p = (k / 2) as isize;
        let mut out = Tensor4::zeros(n, o, h, w);
        for bn in 0..n {
            for oc in 0..o {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let mut acc = bias[oc];
                        for ic in 0..c {
                            for ky in 0..k as isize {
                                for kx in 0..k as isize {
                                    let r = y + ky - p;
                                    let s = x + kx - p;
                                    if r >= 0 && r < h as isize && s >= 0 && s < w as isize {
                                        acc += input.get(bn, ic, r as usize, s as usize)
                                            * weights.get(oc, ic, ky as usize, kx as usize);
                                    }
                                }
                            }
                        }
                        out.set(bn, oc, y as usize, x as usize, acc);
                    }
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f32> {
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn ones_kernel_counts_padded_neighborhood() {
        let input = Tensor4::filled(1, 1, 3, 3, 1.0f32);
        let params = ConvParams::new(Tensor4::filled(1, 1, 3, 3, 1.0), vec![0.0]).unwrap();
        let out = conv2d_forward(&input, &params).unwrap();
        assert_eq!(out.get(0, 0, 1, 1), 9.0);
        for (y, x) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.get(0, 0, y, x), 4.0);
        }
        for (y, x) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_eq!(out.get(0, 0, y, x), 6.0);
        }
    }

    #[test]
    fn identity_1x1_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, 2, 1, 5, 4);
        let params = ConvParams::new(Tensor4::filled(1, 1, 1, 1, 1.0), vec![0.0]).unwrap();
        let out = conv2d_forward(&input, &params).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn matches_reference_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&mut rng, 2, 4, 8, 8);
        let weights = random_tensor(&mut rng, 16, 4, 3, 3);
        let bias: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = ConvParams::new(weights.clone(), bias.clone()).unwrap();
        let fast = conv2d_forward(&input, &params).unwrap();
        let bias64: Vec<f64> = bias.iter().map(|&b| b as f64).collect();
        let slow = conv2d_reference(&input.cast(), &weights.cast(), &bias64);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_reference_for_1x1_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, 1, 3, 6, 7);
        let weights = random_tensor(&mut rng, 5, 3, 1, 1);
        let bias: Vec<f32> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = ConvParams::new(weights.clone(), bias.clone()).unwrap();
        let fast = conv2d_forward(&input, &params).unwrap();
        let bias64: Vec<f64> = bias.iter().map(|&b| b as f64).collect();
        let slow = conv2d_reference(&input.cast(), &weights.cast(), &bias64);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn is_linear_in_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&mut rng, 1, 2, 6, 6);
        let weights = random_tensor(&mut rng, 3, 2, 3, 3);
        let params = ConvParams::new(weights, vec![0.0; 3]).unwrap();
        let scaled = input.map(|v| v * 2.5);
        let a = conv2d_forward(&scaled, &params).unwrap();
        let b = conv2d_forward(&input, &params).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y * 2.5).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_channel_mismatch_naming_both_shapes() {
        let input = Tensor4::<f32>::zeros(1, 2, 4, 4);
        let params = ConvParams::new(Tensor4::zeros(3, 4, 3, 3), vec![0.0; 3]).unwrap();
        let err = conv2d_forward(&input, &params).unwrap_err().to_string();
        assert!(err.contains("(1, 2, 4, 4)"), "{err}");
        assert!(err.contains('4'), "{err}");
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(&mut rng, 1, 2, 4, 4);
        let params = ConvParams::new(random_tensor(&mut rng, 3, 2, 3, 3), vec![0.1; 3]).unwrap();
        let grad_out = Tensor4::zeros(1, 3, 4, 4);
        let (gi, gp) = conv2d_backward(&input, &params, &grad_out).unwrap();
        assert!(gi.as_slice().iter().all(|&v| v == 0.0));
        assert!(gp.weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(gp.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_1x1_case_follows_the_chain_rule() {
        // 1x1 conv with scalar weight w: grad_input = w*g, grad_weight = sum(x*g)
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = random_tensor(&mut rng, 1, 1, 3, 3);
        let wv = 0.7f32;
        let params = ConvParams::new(Tensor4::filled(1, 1, 1, 1, wv), vec![0.0]).unwrap();
        let grad_out = random_tensor(&mut rng, 1, 1, 3, 3);
        let (gi, gp) = conv2d_backward(&input, &params, &grad_out).unwrap();
        for (g, go) in gi.as_slice().iter().zip(grad_out.as_slice()) {
            assert!((g - wv * go).abs() < 1e-6);
        }
        let expected: f32 = input.as_slice().iter().zip(grad_out.as_slice()).map(|(x, g)| x * g).sum();
        assert!((gp.weights.get(0, 0, 0, 0) - expected).abs() < 1e-5);
        let bias_expected: f32 = grad_out.as_slice().iter().sum();
        assert!((gp.bias[0] - bias_expected).abs() < 1e-5);
    }

    #[test]
    fn forward_and_input_gradient_are_adjoint() {
        // <conv(x), y> == <x, conv^T(y)> where conv^T is the backward pass's
        // input gradient
        for seed in [30u64, 31, 32] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, 2, 3, 7, 7).cast::<f64>();
            let y = random_tensor(&mut rng, 2, 4, 7, 7).cast::<f64>();
            let params = ConvParams::new(random_tensor(&mut rng, 4, 3, 3, 3).cast::<f64>(), vec![0.0; 4]).unwrap();
            let ax = conv2d_forward(&x, &params).unwrap();
            let (aty, _) = conv2d_backward(&x, &params, &y).unwrap();
            let lhs: f64 = ax.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.as_slice().iter().zip(aty.as_slice()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()).max(1e-12),
                "seed {seed}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let input = Tensor4::<f32>::zeros(1, 2, 4, 4);
        let params = ConvParams::new(Tensor4::zeros(3, 2, 3, 3), vec![0.0; 3]).unwrap();
        assert!(conv2d_backward(&input, &params, &Tensor4::zeros(1, 3, 5, 4)).is_err());
    }
}
