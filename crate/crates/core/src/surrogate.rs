//! STBP-style surrogate-gradient baseline.
//!
//! The spike nonlinearity is replaced by a smooth pseudo-derivative during the
//! backward pass and the membrane recursion is differentiated as if the reset
//! were absent, `du[t+1]/du[t] = 1 - 1/tau_m`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SnnError};
use crate::lif::{NeuronParams, NeuronTrace, Psc};
use crate::na::{hidden_g, incoming_g, psc_error, weight_gradient, ErrorSignals, LayerError, LayerGradients};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    Rectangular,
    FastSigmoid,
    /// The true derivative of the step function: zero almost everywhere.
    Heaviside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    /// Half-width `a_w` of the surrogate window.
    pub window: f64,
    pub kind: SurrogateKind,
}

impl SurrogateParams {
    pub fn new(window: f64, kind: SurrogateKind) -> Result<Self> {
        if !(window.is_finite() && window > 0.0) {
            return Err(SnnError::InvalidConfig(format!("surrogate window must be > 0, got {window}")));
        }
        Ok(Self { window, kind })
    }
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            window: 0.5,
            kind: SurrogateKind::Rectangular,
        }
    }
}

/// Pseudo-derivative of the spike function at membrane potential `u`.
pub fn surrogate_derivative(u: f64, params: &NeuronParams, sp: &SurrogateParams) -> f64 {
    let x = (u - params.theta()).abs();
    match sp.kind {
        SurrogateKind::Rectangular => {
            if x < sp.window {
                1.0 / (2.0 * sp.window)
            } else {
                0.0
            }
        }
        SurrogateKind::FastSigmoid => {
            let r = 1.0 + x / sp.window;
            1.0 / (sp.window * r * r)
        }
        SurrogateKind::Heaviside => 0.0,
    }
}

/// `delta[t] = e[t] (1/tau_s) h(u[t]) + (1 - 1/tau_m) delta[t+1]`.
pub fn surrogate_delta(trace: &NeuronTrace, e: &[f64], params: &NeuronParams, sp: &SurrogateParams) -> Vec<f64> {
    let mut delta = vec![0.0; e.len()];
    surrogate_delta_into(trace, e, params, sp, &mut delta);
    delta
}

/// [`surrogate_delta`] written into `out`, which must be as long as `e`.
pub fn surrogate_delta_into(trace: &NeuronTrace, e: &[f64], params: &NeuronParams, sp: &SurrogateParams, out: &mut [f64]) {
    let alpha = params.membrane_decay();
    let gain = 1.0 / params.tau_s();
    let mut next = 0.0;
    for t in (0..e.len()).rev() {
        next = e[t] * gain * surrogate_derivative(trace.u[t], params, sp) + alpha * next;
        out[t] = next;
    }
}

pub fn neuron_error_signals(trace: &NeuronTrace, g: Vec<f64>, params: &NeuronParams, sp: &SurrogateParams) -> ErrorSignals {
    let e = psc_error(&g, params);
    let agg_grad = surrogate_delta(trace, &e, params, sp);
    ErrorSignals { g, e, agg_grad }
}

/// Dense-layer backward pass with the surrogate derivative.
pub fn stbp_backward_layer(
    traces: &[NeuronTrace],
    incoming: LayerError<'_>,
    weights: &Matrix,
    a_prev: &[Psc],
    params: &NeuronParams,
    sp: &SurrogateParams,
) -> Result<LayerGradients> {
    check_len("stbp_backward_layer weights rows", traces.len(), weights.rows())?;
    check_len("stbp_backward_layer weights cols", a_prev.len(), weights.cols())?;
    let g = incoming_g(traces, incoming, params)?;
    let signals: Vec<ErrorSignals> = traces
        .iter()
        .zip(g)
        .map(|(tr, g)| neuron_error_signals(tr, g, params, sp))
        .collect();
    let deltas: Vec<Vec<f64>> = signals.iter().map(|s| s.agg_grad.clone()).collect();
    Ok(LayerGradients {
        weight_grad: weight_gradient(a_prev, &deltas)?,
        upstream_g: hidden_g(weights, &deltas)?,
        signals,
    })
}
