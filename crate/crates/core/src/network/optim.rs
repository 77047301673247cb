//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Weights plus their first and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub weights: Matrix,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamState {
    pub fn new(weights: Matrix) -> Self {
        let n = weights.as_slice().len();
        Self {
            weights,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One AdamW update. `step` counts from 1; `layer` is only used in errors.
pub fn adamw_step(state: &mut ParamState, grad: &Matrix, opt: &AdamW, step: u64, layer: usize) -> Result<()> {
    if grad.shape() != state.weights.shape() {
        return Err(SnnError::ShapeMismatch(format!(
            "gradient {:?} vs weights {:?} in layer {layer}",
            grad.shape(),
            state.weights.shape()
        )));
    }
    if grad.as_slice().iter().any(|g| !g.is_finite()) {
        return Err(SnnError::NonFiniteGradient { layer });
    }
    let t = step.max(1) as i32;
    let bias1 = 1.0 - opt.beta1.powi(t);
    let bias2 = 1.0 - opt.beta2.powi(t);
    let decay = 1.0 - opt.lr * opt.weight_decay;
    let w = state.weights.as_mut_slice();
    for (i, &g) in grad.as_slice().iter().enumerate() {
        let m = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
        let v = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        w[i] = w[i] * decay - opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
    Ok(())
}
