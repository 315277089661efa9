//! Adam optimizer with bias correction.

use std::collections::HashMap;

use super::tensor::{Param, Scalar};

/// Optimizer hyperparameters. The defaults match the training setup used
/// throughout this crate: learning rate 2e-4, beta1 0.5, beta2 0.999.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Moment state for a set of parameters, keyed by parameter name, plus the
/// shared step counter used for bias correction.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T: Scalar> {
    pub step: u64,
    pub moments: HashMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { step: 0, moments: HashMap::new() }
    }
}

/// One Adam update over all parameters with populated gradients. Parameters
/// whose gradient is absent are treated as zero-gradient: their moments
/// decay but the bias-corrected update still applies.
pub fn adam_step<T: Scalar>(params: &[Param<T>], state: &mut AdamState<T>, config: &OptimizerConfig) {
    state.step += 1;
    let t = state.step as i32;
    let lr = T::from_f64(config.learning_rate);
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let eps = T::from_f64(config.epsilon);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    for p in params {
        let n = p.numel();
        let entry = state
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| Moments { m: vec![T::zero(); n], v: vec![T::zero(); n] });
        debug_assert_eq!(entry.m.len(), n, "moment size mismatch for {}", p.name);
        let mut tensor = p.value_mut();
        let grad = tensor.grad.clone().unwrap_or_else(|| vec![T::zero(); n]);
        for i in 0..n {
            let g = grad[i];
            entry.m[i] = b1 * entry.m[i] + (T::one() - b1) * g;
            entry.v[i] = b2 * entry.v[i] + (T::one() - b2) * g * g;
            let m_hat = entry.m[i] / bc1;
            let v_hat = entry.v[i] / bc2;
            tensor.data[i] = tensor.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
