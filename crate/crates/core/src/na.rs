//! Neighborhood-aggregation backward pass.
//!
//! Per neuron, the engine
//! 1. turns the incoming PSC error `g` into `e = dL/da` with the synaptic recursion,
//! 2. builds the `N_t` single-flip neighbors of the membrane potential,
//! 3. takes `theta - u[p]` as the signed distance to neighbor `p`,
//! 4. estimates the loss change to each neighbor as `e · (a_p - a)`,
//! 5. stacks the finite differences into the aggregated gradient, which stands in
//!    for `dL/du` both in the weight gradient and in the error sent upstream.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result, SnnError};
use crate::lif::{convolve_spikes, NeuronParams, NeuronTrace, Psc, SpikeTrain};
use crate::mp::{for_each_neighbor_change, sns_neighborhood};
use crate::tensor::Matrix;

/// Symmetric bound `b` on the scale factor `1/d^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClipBound(f64);

impl ClipBound {
    pub fn new(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(SnnError::InvalidConfig(format!("clip bound must be positive, got {b}")));
        }
        Ok(Self(b))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for ClipBound {
    fn default() -> Self {
        Self(10.0)
    }
}

/// How the finite difference is normalised by the neighbor distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteDifference {
    /// `e·(a_p - a) · clip(1/d^3, -b, b)`.
    #[default]
    ScaledClipped,
    /// `e·(a_p - a) / d`.
    Plain,
}

/// Whether the sign of `theta - u[p]` is kept when stacking the aggregated gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConvention {
    #[default]
    Signed,
    /// Drops the sign, treating every unit direction as `+e_p`.
    Unsigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Stack the finite differences directly.
    #[default]
    Sns,
    /// Minimum-norm least squares over the neighbor directions.
    Pseudoinverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NaConfig {
    pub bound: ClipBound,
    pub finite_difference: FiniteDifference,
    pub direction: DirectionConvention,
    pub aggregation: Aggregation,
}

/// Per-neuron backward quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSignals {
    /// Instantaneous PSC error.
    pub g: Vec<f64>,
    /// PSC error signal `dL/da`.
    pub e: Vec<f64>,
    /// Aggregated gradient, used in place of `dL/du`.
    pub agg_grad: Vec<f64>,
}

/// `g = a - kernel * d` for an output neuron.
pub fn output_g(a: &Psc, target: &SpikeTrain, kernel: &[f64]) -> Result<Vec<f64>> {
    check_len("output_g psc", kernel.len(), a.len())?;
    let desired = convolve_spikes(target, kernel)?;
    Ok(a.values().iter().zip(&desired).map(|(x, y)| x - y).collect())
}

/// `g_i[t] = sum_p w_pi · grad_p[t]`: error sent to presynaptic neuron `i`.
///
/// `weights` is `(n_post, n_pre)`; `agg_grads` holds one sequence per postsynaptic neuron.
pub fn hidden_g(weights: &Matrix, agg_grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_len("hidden_g neurons", weights.rows(), agg_grads.len())?;
    let n_steps = agg_grads.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; n_steps]; weights.cols()];
    for (p, grad) in agg_grads.iter().enumerate() {
        check_len("hidden_g steps", n_steps, grad.len())?;
        let row = weights.row(p);
        for (t, &d) in grad.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (i, &w) in row.iter().enumerate() {
                out[i][t] += w * d;
            }
        }
    }
    Ok(out)
}

/// Backward synaptic recursion: `e[N] = g[N]`, `e[t] = g[t] + (1 - 1/tau_s) e[t+1]`.
pub fn psc_error(g: &[f64], params: &NeuronParams) -> Vec<f64> {
    let mut e = vec![0.0; g.len()];
    psc_error_into(g, params, &mut e);
    e
}

/// [`psc_error`] written into `out`, which must be as long as `g`.
pub fn psc_error_into(g: &[f64], params: &NeuronParams, out: &mut [f64]) {
    let decay = params.synaptic_decay();
    let mut next = 0.0;
    for t in (0..g.len()).rev() {
        next = g[t] + decay * next;
        out[t] = next;
    }
}

fn clip_scale(signed_dist: f64, bound: ClipBound) -> f64 {
    let b = bound.value();
    (1.0 / signed_dist.powi(3)).clamp(-b, b)
}

/// Scaled and clipped finite difference `e·(a_p - a) · clip(1/d^3, -b, b)`.
pub fn neighbor_finite_difference(e: &[f64], a: &Psc, a_p: &Psc, signed_dist: f64, bound: ClipBound) -> f64 {
    loss_change(e, a.values(), a_p.values()) * clip_scale(signed_dist, bound)
}

/// Unscaled finite difference `e·(a_p - a) / d`.
pub fn neighbor_finite_difference_plain(e: &[f64], a: &Psc, a_p: &Psc, signed_dist: f64) -> f64 {
    loss_change(e, a.values(), a_p.values()) / signed_dist
}

fn loss_change(e: &[f64], a: &[f64], a_p: &[f64]) -> f64 {
    e.iter().zip(a.iter().zip(a_p)).map(|(e, (x, y))| e * (y - x)).sum()
}

fn apply_scale(change: f64, signed_dist: f64, cfg: &NaConfig) -> f64 {
    let d = match cfg.direction {
        DirectionConvention::Signed => signed_dist,
        DirectionConvention::Unsigned => signed_dist.abs(),
    };
    match cfg.finite_difference {
        FiniteDifference::ScaledClipped => change * clip_scale(d, cfg.bound),
        FiniteDifference::Plain => change / d,
    }
}

/// Under single-flip neighborhoods the direction matrix is diagonal, so the
/// aggregated gradient is the stacked finite differences.
pub fn aggregate_sns(finite_diffs: &[f64]) -> Vec<f64> {
    finite_diffs.to_vec()
}

/// Minimum-norm least-squares solution of `O · grad = f`, where row `p` of `O`
/// is the unit direction of neighbor `p`.
pub fn aggregate_general(directions: &[Vec<f64>], finite_diffs: &[f64]) -> Result<Vec<f64>> {
    check_len("aggregate_general", directions.len(), finite_diffs.len())?;
    check_finite("aggregate_general finite differences", finite_diffs)?;
    let Some(first) = directions.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    for d in directions {
        check_len("aggregate_general direction", n, d.len())?;
        check_finite("aggregate_general direction", d)?;
    }
    let o = DMatrix::from_fn(directions.len(), n, |r, c| directions[r][c]);
    let f = DVector::from_column_slice(finite_diffs);
    let svd = o.svd(true, true);
    let largest = svd.singular_values.max();
    let eps = if largest > 0.0 { 1e-10 * largest } else { 0.0 };
    let solution = svd
        .solve(&f, eps)
        .map_err(|e| SnnError::InvalidConfig(format!("pseudoinverse failed: {e}")))?;
    Ok(solution.iter().copied().collect())
}

/// `dL/dw_ij = sum_t a_j[t] · grad_i[t]`, shaped `(n_post, n_pre)`.
pub fn weight_gradient(a_prev: &[Psc], agg_grads: &[Vec<f64>]) -> Result<Matrix> {
    let n_steps = a_prev.first().map(Psc::len).or(agg_grads.first().map(Vec::len)).unwrap_or(0);
    let mut out = Matrix::zeros(agg_grads.len(), a_prev.len());
    for a in a_prev {
        check_len("weight_gradient presynaptic steps", n_steps, a.len())?;
    }
    for (i, grad) in agg_grads.iter().enumerate() {
        check_len("weight_gradient postsynaptic steps", n_steps, grad.len())?;
        let row = out.row_mut(i);
        for (j, a) in a_prev.iter().enumerate() {
            row[j] = a.values().iter().zip(grad).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

/// Steps 2-5 for one neuron: aggregated gradient from its PSC error signal.
pub fn aggregated_gradient(trace: &NeuronTrace, e: &[f64], params: &NeuronParams, cfg: &NaConfig) -> Result<Vec<f64>> {
    let mut out = vec![0.0; params.n_steps()];
    aggregated_gradient_into(trace, e, params, cfg, &mut out)?;
    Ok(out)
}

/// [`aggregated_gradient`] written into `out`.
pub fn aggregated_gradient_into(trace: &NeuronTrace, e: &[f64], params: &NeuronParams, cfg: &NaConfig, out: &mut [f64]) -> Result<()> {
    let n = params.n_steps();
    check_len("aggregated_gradient e", n, e.len())?;
    check_len("aggregated_gradient out", n, out.len())?;
    match cfg.aggregation {
        Aggregation::Sns => {
            out.fill(0.0);
            if e.iter().all(|&v| v == 0.0) {
                return Ok(());
            }
            for_each_neighbor_change(trace, params, e, |p, d, change| {
                out[p] = apply_scale(change, d, cfg);
            });
            Ok(())
        }
        Aggregation::Pseudoinverse => {
            let hood = sns_neighborhood(trace, params)?;
            let mut directions = Vec::with_capacity(hood.len());
            let mut diffs = Vec::with_capacity(hood.len());
            for m in &hood.members {
                let change = loss_change(e, trace.a.values(), m.trace.a.values());
                let magnitude = apply_scale(change, m.signed_dist.abs(), cfg);
                let dir = match cfg.direction {
                    DirectionConvention::Signed => m.unit_dir.clone(),
                    DirectionConvention::Unsigned => m.unit_dir.iter().map(|v| v.abs()).collect(),
                };
                directions.push(dir);
                diffs.push(magnitude);
            }
            out.copy_from_slice(&aggregate_general(&directions, &diffs)?);
            Ok(())
        }
    }
}

/// Full error signals for one neuron given its incoming `g`.
pub fn neuron_error_signals(trace: &NeuronTrace, g: Vec<f64>, params: &NeuronParams, cfg: &NaConfig) -> Result<ErrorSignals> {
    let e = psc_error(&g, params);
    let agg_grad = aggregated_gradient(trace, &e, params, cfg)?;
    Ok(ErrorSignals { g, e, agg_grad })
}

/// Incoming error for a layer: either the PSC error from the layer above or output targets.
#[derive(Debug, Clone, Copy)]
pub enum LayerError<'a> {
    Hidden(&'a [Vec<f64>]),
    Targets(&'a [SpikeTrain]),
}

pub(crate) fn incoming_g(traces: &[NeuronTrace], incoming: LayerError<'_>, params: &NeuronParams) -> Result<Vec<Vec<f64>>> {
    match incoming {
        LayerError::Hidden(g) => {
            check_len("layer error neurons", traces.len(), g.len())?;
            for row in g {
                check_len("layer error steps", params.n_steps(), row.len())?;
            }
            Ok(g.to_vec())
        }
        LayerError::Targets(d) => {
            check_len("targets", traces.len(), d.len())?;
            let kernel = crate::lif::psc_kernel(params);
            traces.iter().zip(d).map(|(tr, d)| output_g(&tr.a, d, &kernel)).collect()
        }
    }
}

/// Result of one dense layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight_grad: Matrix,
    /// `g` for the presynaptic layer.
    pub upstream_g: Vec<Vec<f64>>,
    pub signals: Vec<ErrorSignals>,
}

/// One dense layer processed by the five-step pipeline.
///
/// `weights` is `(n_post, n_pre)`, `a_prev` the presynaptic PSCs that drove `traces`.
pub fn na_backward_layer(
    traces: &[NeuronTrace],
    incoming: LayerError<'_>,
    weights: &Matrix,
    a_prev: &[Psc],
    params: &NeuronParams,
    cfg: &NaConfig,
) -> Result<LayerGradients> {
    check_len("na_backward_layer weights rows", traces.len(), weights.rows())?;
    check_len("na_backward_layer weights cols", a_prev.len(), weights.cols())?;
    let g = incoming_g(traces, incoming, params)?;
    let signals = traces
        .iter()
        .zip(g)
        .map(|(tr, g)| neuron_error_signals(tr, g, params, cfg))
        .collect::<Result<Vec<_>>>()?;
    let grads: Vec<Vec<f64>> = signals.iter().map(|s| s.agg_grad.clone()).collect();
    Ok(LayerGradients {
        weight_grad: weight_gradient(a_prev, &grads)?,
        upstream_g: hidden_g(weights, &grads)?,
        signals,
    })
}
