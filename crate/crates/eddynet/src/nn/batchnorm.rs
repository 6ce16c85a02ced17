//! Batch normalization over the `(batch, height, width)` axes of each channel.
//!
//! Training normalizes with the current batch statistics and folds them into
//! the moving averages; inference uses the moving averages alone and refuses
//! to run before any have been collected.

use rayon::prelude::*;

use super::params::BatchNormParams;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::tensor::Tensor4;

/// Keras-era framework defaults; the architecture was tuned against them.
pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Values the backward pass needs: the normalized activations and the
/// per-channel inverse standard deviation of the batch.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<T>,
}

fn check_channels<T: Scalar>(input: &Tensor4<T>, params: &BatchNormParams<T>) -> Result<()> {
    if input.channels() != params.channels() {
        return Err(Error::shape(
            "batchnorm channels",
            params.channels(),
            format!("{:?}", input.shape()),
        ));
    }
    Ok(())
}

/// Per-channel sums over all `(batch, y, x)` positions.
fn channel_stats<T: Scalar>(input: &Tensor4<T>) -> (Vec<T>, Vec<T>) {
    let (n, c, h, w) = input.shape();
    let m = T::lit((n * h * w) as f64);
    let means: Vec<T> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut acc = T::zero();
            for bn in 0..n {
                acc += pairwise_sum(input.plane(bn, ch));
            }
            acc / m
        })
        .collect();
    let vars: Vec<T> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mean = means[ch];
            let mut acc = T::zero();
            for bn in 0..n {
                let mut plane_acc = T::zero();
                for &v in input.plane(bn, ch) {
                    let d = v - mean;
                    plane_acc += d * d;
                }
                acc += plane_acc;
            }
            acc / m
        })
        .collect();
    (means, vars)
}

/// Normalize a batch. Train mode returns the cache for the backward pass and
/// updates the moving statistics in `params`; infer mode uses the stored
/// moving statistics and returns no cache.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &mut BatchNormParams<T>,
    mode: BnMode,
) -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
    check_channels(input, params)?;
    let (n, c, h, w) = input.shape();
    let eps = T::lit(BN_EPSILON);

    let (mean, inv_std, cache) = match mode {
        BnMode::Train => {
            let (mean, var) = channel_stats(input);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let momentum = T::lit(BN_MOMENTUM);
            let rest = T::one() - momentum;
            for ch in 0..c {
                params.moving_mean[ch] = momentum * params.moving_mean[ch] + rest * mean[ch];
                params.moving_var[ch] = momentum * params.moving_var[ch] + rest * var[ch];
            }
            params.batches_tracked += 1;
            (mean, inv_std, true)
        }
        BnMode::Infer => {
            if params.batches_tracked == 0 {
                return Err(Error::UninitializedBatchNorm);
            }
            // Debias the initialization transient, mirroring ADAM's moment
            // correction: after t updates the moving average still holds a
            // momentum^t share of its (0, 1) starting point, which distorts
            // inference badly when epochs hold few batches. The correction
            // decays to the identity as t grows.
            let corr = BN_MOMENTUM.powi(params.batches_tracked.min(i32::MAX as u64) as i32);
            let scale = T::lit(1.0 / (1.0 - corr));
            let corr = T::lit(corr);
            let mean: Vec<T> = params.moving_mean.iter().map(|&m| m * scale).collect();
            let inv_std: Vec<T> = params
                .moving_var
                .iter()
                .map(|&v| {
                    let debiased = ((v - corr) * scale).max(T::zero());
                    T::one() / (debiased + eps).sqrt()
                })
                .collect();
            (mean, inv_std, false)
        }
    };

    let mut normalized = Tensor4::zeros(n, c, h, w);
    normalized
        .as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let bn = plane_idx / c;
            let ch = plane_idx % c;
            let mu = mean[ch];
            let is = inv_std[ch];
            for (o, &v) in out_plane.iter_mut().zip(input.plane(bn, ch)) {
                *o = (v - mu) * is;
            }
        });

    let mut out = Tensor4::zeros(n, c, h, w);
    out.as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let bn = plane_idx / c;
            let ch = plane_idx % c;
            let g = params.gamma[ch];
            let b = params.beta[ch];
            for (o, &v) in out_plane.iter_mut().zip(normalized.plane(bn, ch)) {
                *o = g * v + b;
            }
        });

    if cache {
        Ok((out, Some(BnCache { normalized, inv_std })))
    } else {
        Ok((out, None))
    }
}

/// Train-mode gradient, including the dependence of the batch statistics on
/// the input:
/// `dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    params: &BatchNormParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    check_channels(grad_out, params)?;
    let (n, c, h, w) = grad_out.shape();
    if cache.normalized.shape() != grad_out.shape() {
        return Err(Error::shape(
            "batchnorm_backward grad_out",
            format!("{:?}", cache.normalized.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let m = T::lit((n * h * w) as f64);

    // per-channel sums of dy and dy*xhat
    let sums: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut s = T::zero();
            let mut sx = T::zero();
            for bn in 0..n {
                let go = grad_out.plane(bn, ch);
                let xh = cache.normalized.plane(bn, ch);
                s += pairwise_sum(go);
                let mut acc = T::zero();
                for (g, x) in go.iter().zip(xh) {
                    acc += *g * *x;
                }
                sx += acc;
            }
            (s, sx)
        })
        .collect();

    let grad_beta: Vec<T> = sums.iter().map(|&(s, _)| s).collect();
    let grad_gamma: Vec<T> = sums.iter().map(|&(_, sx)| sx).collect();

    let mut grad_input = Tensor4::zeros(n, c, h, w);
    grad_input
        .as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let bn = plane_idx / c;
            let ch = plane_idx % c;
            let (s, sx) = sums[ch];
            let scale = params.gamma[ch] * cache.inv_std[ch] / m;
            let go = grad_out.plane(bn, ch);
            let xh = cache.normalized.plane(bn, ch);
            for ((gi, &g), &x) in gi_plane.iter_mut().zip(go).zip(xh) {
                *gi = scale * (m * g - s - x * sx);
            }
        });

    Ok((grad_input, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        // variance 0: the epsilon guard keeps the output finite and ~0
        let input = Tensor4::filled(2, 3, 4, 4, 7.0f32);
        let mut params = BatchNormParams::new(3);
        let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        assert!(out.as_slice().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn beta_shifts_the_output_mean() {
        let input = random_input(30, 4, 2, 8, 8);
        let mut params = BatchNormParams::new(2);
        params.beta = vec![5.0, 5.0];
        let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        for ch in 0..2 {
            let mut acc = 0.0f64;
            for bn in 0..4 {
                acc += out.plane(bn, ch).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = acc / (4.0 * 64.0);
            assert!((mean - 5.0).abs() < 1e-4, "{mean}");
        }
    }

    #[test]
    fn train_mode_output_statistics_recompute_to_standard() {
        // recompute mean/variance on the output itself (gamma=1, beta=0)
        let input = random_input(31, 8, 4, 16, 16);
        let mut params = BatchNormParams::new(4);
        let (out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        let m = 8.0 * 16.0 * 16.0;
        for ch in 0..4 {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for bn in 0..8 {
                for &v in out.plane(bn, ch) {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
            }
            let mean = sum / m;
            let var = sq / m - mean * mean;
            assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn moving_statistics_blend_with_momentum() {
        let input = Tensor4::filled(1, 1, 2, 2, 4.0f32);
        let mut params = BatchNormParams::new(1);
        batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        // moving_mean = 0.99*0 + 0.01*4, moving_var = 0.99*1 + 0.01*0
        assert!((params.moving_mean[0] - 0.04).abs() < 1e-6);
        assert!((params.moving_var[0] - 0.99).abs() < 1e-6);
        assert_eq!(params.batches_tracked, 1);
    }

    #[test]
    fn infer_without_tracked_batches_is_rejected() {
        let input = Tensor4::<f32>::zeros(1, 2, 2, 2);
        let mut params = BatchNormParams::new(2);
        let err = batchnorm_forward(&input, &mut params, BnMode::Infer).unwrap_err();
        assert!(matches!(err, Error::UninitializedBatchNorm));
    }

    #[test]
    fn infer_uses_moving_statistics() {
        let mut params = BatchNormParams::<f32>::new(1);
        params.moving_mean = vec![2.0];
        params.moving_var = vec![4.0];
        // enough tracked batches that the debias correction is the identity
        params.batches_tracked = 10_000_000;
        let input = Tensor4::filled(1, 1, 1, 1, 6.0f32);
        let (out, cache) = batchnorm_forward(&input, &mut params, BnMode::Infer).unwrap();
        assert!(cache.is_none());
        // (6-2)/sqrt(4+1e-3) = 1.99975...
        assert!((out.get(0, 0, 0, 0) - 1.99975).abs() < 1e-4);
    }

    #[test]
    fn infer_debias_recovers_single_batch_statistics() {
        // after exactly one tracked batch the debiased moving statistics
        // equal that batch's statistics, so train and infer outputs agree
        let input = random_input(33, 4, 2, 6, 6);
        let mut params = BatchNormParams::new(2);
        let (train_out, _) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        let (infer_out, _) = batchnorm_forward(&input, &mut params, BnMode::Infer).unwrap();
        for (a, b) in train_out.as_slice().iter().zip(infer_out.as_slice()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn single_element_channel_closed_form() {
        // one element per channel: xhat = 0, so out = beta, dx = 0, dgamma = 0, dbeta = g
        let input = Tensor4::filled(1, 1, 1, 1, 3.0f32);
        let mut params = BatchNormParams::new(1);
        params.beta = vec![0.25];
        let (out, cache) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        assert!((out.get(0, 0, 0, 0) - 0.25).abs() < 1e-6);
        let g = Tensor4::filled(1, 1, 1, 1, 2.0f32);
        let (dx, dgamma, dbeta) = batchnorm_backward(&cache.unwrap(), &params, &g).unwrap();
        assert_eq!(dx.get(0, 0, 0, 0), 0.0);
        assert_eq!(dgamma[0], 0.0);
        assert_eq!(dbeta[0], 2.0);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let input = random_input(32, 2, 2, 4, 4);
        let mut params = BatchNormParams::new(2);
        let (_, cache) = batchnorm_forward(&input, &mut params, BnMode::Train).unwrap();
        let (dx, dgamma, dbeta) =
            batchnorm_backward(&cache.unwrap(), &params, &Tensor4::zeros(2, 2, 4, 4)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(dgamma.iter().all(|&v| v == 0.0));
        assert!(dbeta.iter().all(|&v| v == 0.0));
    }
}
