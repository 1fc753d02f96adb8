//! Adam updates over the parameter blocks.

use super::{Gradients, ModelParams};
use crate::math;

/// First and second moments per parameter plus the step counter.
///
/// Defaults follow the training recipe used throughout: beta1 = 0.9,
/// beta2 = 0.99 (not 0.999), epsilon = 1e-8.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
    // running β^t products for bias correction
    beta1_power: f64,
    beta2_power: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPSILON: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            learning_rate,
            epsilon: ADAM_EPSILON,
            beta1_power: 1.0,
            beta2_power: 1.0,
        }
    }
}

/// One Adam step: increments t, updates biased moments, and applies the
/// bias-corrected update θ ← θ − lr · m̂ / (√v̂ + ε).
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &Gradients) {
    state.step += 1;
    state.beta1_power *= state.beta1;
    state.beta2_power *= state.beta2;
    let bias1 = 1.0 - state.beta1_power;
    let bias2 = 1.0 - state.beta2_power;
    let param_blocks = params.trainable_blocks_mut();
    let grad_blocks = grads.blocks();
    let mut m_blocks = state.m.blocks_mut();
    let mut v_blocks = state.v.blocks_mut();
    debug_assert_eq!(param_blocks.len(), grad_blocks.len());
    for (((pb, gb), mb), vb) in param_blocks
        .into_iter()
        .zip(grad_blocks)
        .zip(m_blocks.iter_mut())
        .zip(v_blocks.iter_mut())
    {
        for (((p, &g), m), v) in pb.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut()) {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= state.learning_rate * m_hat / (math::sqrt(v_hat) + state.epsilon);
        }
    }
}
