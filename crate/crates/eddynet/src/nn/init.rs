//! Truncated-Gaussian weight initialization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Variance of the pre-truncation Gaussian as a function of fan-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceRule {
    /// `2 / fan_in`, paired with ReLU stages.
    He,
    /// `1 / fan_in`, paired with the self-normalizing SELU stages.
    Lecun,
}

impl VarianceRule {
    pub fn variance(self, fan_in: usize) -> f64 {
        match self {
            VarianceRule::He => 2.0 / fan_in as f64,
            VarianceRule::Lecun => 1.0 / fan_in as f64,
        }
    }
}

/// Draw `N(0, sigma^2)` samples rejected outside two standard deviations.
/// `fan_in` is the kernel's receptive field times its input channels; no
/// rescaling is applied after truncation.
pub fn init_truncated_gaussian<T: Scalar>(
    shape: (usize, usize, usize, usize),
    rule: VarianceRule,
    fan_in: usize,
    rng: &mut impl Rng,
) -> Tensor4<T> {
    let sigma = rule.variance(fan_in).sqrt();
    let (n, c, h, w) = shape;
    let data = (0..n * c * h * w)
        .map(|_| {
            loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    return T::lit(z * sigma);
                }
            }
        })
        .collect();
    Tensor4::from_vec(n, c, h, w, data).expect("shape matches generated data")
}
