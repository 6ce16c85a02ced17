//! Element-wise activations: ReLU and the scaled exponential linear unit.

use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Fixed SELU scale, published to more digits than f32 can hold.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// Fixed SELU alpha.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Selu,
}

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `selu(x) = lambda*x` for `x > 0`, `lambda*alpha*(exp(x) - 1)` otherwise.
pub fn selu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let lambda = T::lit(SELU_LAMBDA);
    let alpha = T::lit(SELU_ALPHA);
    input.map(|v| {
        if v > T::zero() {
            lambda * v
        } else {
            lambda * alpha * (v.exp() - T::one())
        }
    })
}

pub fn activation_forward<T: Scalar>(input: &Tensor4<T>, act: Activation) -> Tensor4<T> {
    match act {
        Activation::Relu => relu(input),
        Activation::Selu => selu(input),
    }
}

/// Exact derivative at the cached forward input. At zero both activations use
/// the `x <= 0` branch (ReLU's derivative there is defined as 0).
pub fn activation_backward<T: Scalar>(
    input: &Tensor4<T>,
    act: Activation,
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let mut out = grad_out.clone();
    match act {
        Activation::Relu => {
            for (g, &x) in out.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if x <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        Activation::Selu => {
            let lambda = T::lit(SELU_LAMBDA);
            let la = T::lit(SELU_LAMBDA * SELU_ALPHA);
            for (g, &x) in out.as_mut_slice().iter_mut().zip(input.as_slice()) {
                let d = if x > T::zero() { lambda } else { la * x.exp() };
                *g = *g * d;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tensor(v: f64) -> Tensor4<f64> {
        Tensor4::filled(1, 1, 1, 1, v)
    }

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(relu(&scalar_tensor(-3.0)).get(0, 0, 0, 0), 0.0);
        assert_eq!(relu(&scalar_tensor(3.0)).get(0, 0, 0, 0), 3.0);
    }

    #[test]
    fn selu_fixed_points() {
        assert_eq!(selu(&scalar_tensor(0.0)).get(0, 0, 0, 0), 0.0);
        // selu(1) = lambda
        let v = selu(&scalar_tensor(1.0)).get(0, 0, 0, 0);
        assert!((v - 1.05070098).abs() < 1e-8, "{v}");
    }

    #[test]
    fn selu_saturates_at_minus_lambda_alpha() {
        let limit = -SELU_LAMBDA * SELU_ALPHA;
        assert!((limit + 1.75809934).abs() < 1e-8);
        let v = selu(&scalar_tensor(-20.0)).get(0, 0, 0, 0);
        assert!((v - limit).abs() < 1e-6, "{v} vs {limit}");
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let g = activation_backward(&scalar_tensor(0.0), Activation::Relu, &scalar_tensor(1.0));
        assert_eq!(g.get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn selu_derivative_matches_branches() {
        let g = activation_backward(&scalar_tensor(2.0), Activation::Selu, &scalar_tensor(1.0));
        assert!((g.get(0, 0, 0, 0) - SELU_LAMBDA).abs() < 1e-12);
        let g = activation_backward(&scalar_tensor(-1.0), Activation::Selu, &scalar_tensor(1.0));
        let expected = SELU_LAMBDA * SELU_ALPHA * (-1.0f64).exp();
        assert!((g.get(0, 0, 0, 0) - expected).abs() < 1e-12);
    }
}
