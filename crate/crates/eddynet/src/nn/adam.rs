//! ADAM parameter updates with bias-corrected moments.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optimizer hyperparameters. The defaults are the standard ADAM settings;
/// the learning rate is the only one the training CLI exposes.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..AdamHyper::default()
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self) -> &[T] {
        &self.second_moment
    }
}

/// One bias-corrected update:
/// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`,
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters", state.first_moment.len()),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::lit(hyper.beta1);
    let b2 = T::lit(hyper.beta2);
    let one = T::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let lr = T::lit(hyper.learning_rate);
    let eps = T::lit(hyper.epsilon);

    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut params = vec![1.0f64, -2.0, 0.5];
        let mut state = AdamState::new(3);
        let hyper = AdamHyper::default();
        for _ in 0..10 {
            adam_step(&mut params, &[0.0; 3], &mut state, &hyper).unwrap();
        }
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // bias correction gives m_hat = g, v_hat = g^2, so the update is
        // -lr * g / (|g| + eps) ~= -lr * sign(g)
        let mut params = vec![0.0f64];
        let mut state = AdamState::new(1);
        let hyper = AdamHyper::default();
        adam_step(&mut params, &[0.5], &mut state, &hyper).unwrap();
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((params[0] - expected).abs() < 1e-12, "{} vs {expected}", params[0]);
        assert!((params[0] + 1e-3).abs() < 1e-7);
    }

    #[test]
    fn constant_gradient_update_magnitude_converges_to_the_learning_rate() {
        // fixed point of the moment recursions: m_hat -> g, v_hat -> g^2
        let mut params = vec![10.0f64];
        let mut state = AdamState::new(1);
        let hyper = AdamHyper::default();
        let mut last = params[0];
        let mut delta = 0.0;
        for _ in 0..500 {
            adam_step(&mut params, &[0.25], &mut state, &hyper).unwrap();
            delta = last - params[0];
            last = params[0];
        }
        assert!((delta - 1e-3).abs() < 5e-5, "final step {delta}");
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut params = vec![0.0f64; 4];
        let mut state = AdamState::new(4);
        let hyper = AdamHyper::default();
        for i in 0..50 {
            let g = [(i as f64).sin(), -1.0, 2.0, -0.001];
            adam_step(&mut params, &g, &mut state, &hyper).unwrap();
            assert!(state.second_moment().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let mut params = vec![0.0f64; 2];
        let mut state = AdamState::new(2);
        assert!(adam_step(&mut params, &[0.0; 3], &mut state, &AdamHyper::default()).is_err());
    }
}
