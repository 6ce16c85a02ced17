use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type for tensors and layer kernels.
///
/// All network math runs in `f32`. The `f64` instantiation exists for the
/// finite-difference machinery in [`crate::nn::gradcheck`], where single
/// precision would drown the difference quotients in rounding noise.
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal (hyperparameters, fixed constants).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal must be representable")
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

/// Sum a slice by recursive halving.
///
/// Error grows with log(n) rather than n, which keeps per-channel statistics
/// over ~10^5 f32 elements accurate enough for the stated tolerances. The
/// association order is fixed, so results are reproducible.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    if xs.len() <= 32 {
        let mut acc = T::zero();
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_sequential_on_small_input() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
    }

    #[test]
    fn pairwise_is_accurate_on_large_f32_input() {
        // 2^20 copies of 0.1f32: naive sequential summation drifts visibly,
        // pairwise stays within a few ulps of the true value.
        let xs = vec![0.1f32; 1 << 20];
        let total = pairwise_sum(&xs) as f64;
        let expected = 0.1f32 as f64 * (1 << 20) as f64;
        assert!((total - expected).abs() / expected < 1e-6);
    }
}
