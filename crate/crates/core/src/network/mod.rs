//! Layered spiking networks: forward simulation, the two backward engines,
//! loss, optimizer and training loop.
//!
//! Activations travel between layers as neuron-major PSC buffers, `x[n * N_t + t]`.
//! The encoded input currents play the role of the first layer's presynaptic PSCs.

pub mod layers;
pub mod loss;
pub mod optim;
pub mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result, SnnError};
use crate::lif::{integrate, psc_kernel, NeuronParams, NeuronTrace, Psc, SpikeTrain};
use crate::na::{self, psc_error_into, NaConfig};
use crate::surrogate::{self, SurrogateParams};
use crate::tensor::Matrix;

pub use layers::{format_architecture, parse_architecture, LayerSpec, Shape, WeightInit};
pub use loss::{classify, classify_with, van_rossum_loss, DecisionRule, TargetEncoding};
pub use optim::{adamw_step, AdamW, ParamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Na,
    Surrogate,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Na => "na",
            Method::Surrogate => "surrogate",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "na" => Ok(Method::Na),
            "surrogate" | "stbp" => Ok(Method::Surrogate),
            other => Err(SnnError::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BackwardConfig {
    pub method: Method,
    pub na: NaConfig,
    pub surrogate: SurrogateParams,
}

impl BackwardConfig {
    pub fn na() -> Self {
        Self::default()
    }

    pub fn surrogate() -> Self {
        Self {
            method: Method::Surrogate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub state: ParamState,
}

/// Forward record of one layer for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    /// Neuron traces; empty for pooling layers.
    pub traces: Vec<NeuronTrace>,
    /// Output PSCs, neuron-major.
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCache {
    pub input: Vec<f64>,
    pub layers: Vec<LayerCache>,
}

/// Per-layer membrane error (aggregated gradient or surrogate delta), neuron-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSignals {
    pub deltas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    params: NeuronParams,
    layers: Vec<Layer>,
    step: u64,
    #[serde(skip)]
    cache: Option<Vec<SampleCache>>,
}

impl Model {
    /// Builds a model with freshly initialized weights.
    pub fn new<R: Rng + ?Sized>(params: NeuronParams, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        Self::with_dense_init(params, specs, WeightInit::KaimingNormal, rng)
    }

    /// Like [`Model::new`] but with `dense_init` for the fully connected layers.
    pub fn with_dense_init<R: Rng + ?Sized>(
        params: NeuronParams,
        specs: &[LayerSpec],
        dense_init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(SnnError::ShapeMismatch("model needs at least one layer".into()));
        }
        for pair in specs.windows(2) {
            if pair[0].output_shape().size() != pair[1].input_shape().size() {
                return Err(SnnError::ShapeMismatch(format!(
                    "layer output {} does not feed input {}",
                    pair[0].output_shape(),
                    pair[1].input_shape()
                )));
            }
        }
        if !specs.last().is_some_and(LayerSpec::is_spiking) {
            return Err(SnnError::ShapeMismatch("the output layer must hold spiking neurons".into()));
        }
        let layers = specs
            .iter()
            .map(|spec| Layer {
                spec: *spec,
                state: ParamState::new(init_weights(spec, dense_init, rng)),
            })
            .collect();
        Ok(Self {
            params,
            layers,
            step: 0,
            cache: None,
        })
    }

    pub fn from_architecture<R: Rng + ?Sized>(params: NeuronParams, arch: &str, rng: &mut R) -> Result<Self> {
        Self::new(params, &parse_architecture(arch)?, rng)
    }

    pub fn params(&self) -> &NeuronParams {
        &self.params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].spec.input_shape().size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.output_shape().size())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn weights(&self, layer: usize) -> &Matrix {
        &self.layers[layer].state.weights
    }

    pub fn set_weights(&mut self, layer: usize, weights: Matrix) -> Result<()> {
        let target = &mut self.layers[layer].state;
        if weights.shape() != target.weights.shape() {
            return Err(SnnError::ShapeMismatch(format!(
                "weights {:?} for layer {layer} of shape {:?}",
                weights.shape(),
                target.weights.shape()
            )));
        }
        *target = ParamState::new(weights);
        Ok(())
    }

    /// Runs every layer over the window for one sample.
    pub fn forward_sample(&self, input: &[f64]) -> Result<SampleCache> {
        let n = self.params.n_steps();
        check_len("model input", self.input_size() * n, input.len())?;
        check_finite("model input", input)?;
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let x = if idx == 0 { input } else { &layers[idx - 1].output };
            layers.push(self.forward_layer(layer, x)?);
        }
        Ok(SampleCache {
            input: input.to_vec(),
            layers,
        })
    }

    fn forward_layer(&self, layer: &Layer, x: &[f64]) -> Result<LayerCache> {
        let n = self.params.n_steps();
        let currents = match layer.spec {
            LayerSpec::Dense { n_in, n_out } => dense_currents(&layer.state.weights, x, n_in, n_out, n),
            LayerSpec::Conv2d { .. } => layers::conv2d_currents(&layer.spec, layer.state.weights.as_slice(), x, n),
            LayerSpec::AvgPool2d { input, window } => {
                return Ok(LayerCache {
                    traces: Vec::new(),
                    output: layers::avgpool2d_forward(input, window, x, n),
                });
            }
        };
        check_finite("synaptic input", &currents)?;
        let traces: Vec<NeuronTrace> = currents
            .chunks(n)
            .map(|c| integrate(c.to_vec(), &self.params))
            .collect();
        let output = traces.iter().flat_map(|tr| tr.a.values().iter().copied()).collect();
        Ok(LayerCache { traces, output })
    }

    /// Output-layer PSCs of a cached sample.
    pub fn output_pscs(&self, cache: &SampleCache) -> Vec<Psc> {
        cache.layers.last().map_or_else(Vec::new, |l| l.traces.iter().map(|t| t.a.clone()).collect())
    }

    pub fn output_spikes(&self, cache: &SampleCache) -> Vec<SpikeTrain> {
        cache.layers.last().map_or_else(Vec::new, |l| l.traces.iter().map(|t| t.s.clone()).collect())
    }

    /// Forward pass over a batch; the caches are kept for [`Model::model_backward`].
    pub fn model_forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<Vec<Psc>>> {
        let caches = self.forward_batch(inputs)?;
        let outputs = caches.iter().map(|c| self.output_pscs(c)).collect();
        self.cache = Some(caches);
        Ok(outputs)
    }

    pub fn forward_batch(&self, inputs: &[&[f64]]) -> Result<Vec<SampleCache>> {
        inputs.par_iter().map(|x| self.forward_sample(x)).collect()
    }

    pub fn cached(&self) -> Option<&[SampleCache]> {
        self.cache.as_deref()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Membrane errors of every layer for one sample given the output-layer `g`.
    pub fn backward_sample(&self, cache: &SampleCache, g_out: Vec<Vec<f64>>, cfg: &BackwardConfig) -> Result<SampleSignals> {
        let n = self.params.n_steps();
        check_len("cache layers", self.layers.len(), cache.layers.len())?;
        let mut deltas = vec![Vec::new(); self.layers.len()];
        // incoming g for the current layer, neuron-major
        let mut g: Vec<f64> = {
            check_len("output g neurons", self.output_size(), g_out.len())?;
            let mut flat = Vec::with_capacity(self.output_size() * n);
            for row in &g_out {
                check_len("output g steps", n, row.len())?;
                flat.extend_from_slice(row);
            }
            flat
        };
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[idx];
            let x = if idx == 0 { &cache.input } else { &cache.layers[idx - 1].output };
            match layer.spec {
                LayerSpec::AvgPool2d { input, window } => {
                    g = layers::avgpool2d_backward(input, window, &g, n);
                }
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                    let delta = self.membrane_errors(&lc.traces, &g, cfg)?;
                    if idx > 0 {
                        g = match layer.spec {
                            LayerSpec::Dense { n_in, n_out } => {
                                dense_upstream(&layer.state.weights, &delta, n_in, n_out, n)
                            }
                            _ => {
                                let mut up = vec![0.0; x.len()];
                                layers::conv2d_backward(
                                    &layer.spec,
                                    layer.state.weights.as_slice(),
                                    x,
                                    &delta,
                                    n,
                                    None,
                                    Some(&mut up),
                                );
                                up
                            }
                        };
                    }
                    deltas[idx] = delta;
                }
            }
        }
        Ok(SampleSignals { deltas })
    }

    fn membrane_errors(&self, traces: &[NeuronTrace], g: &[f64], cfg: &BackwardConfig) -> Result<Vec<f64>> {
        let n = self.params.n_steps();
        let params = &self.params;
        let mut out = vec![0.0; traces.len() * n];
        let mut e = vec![0.0; n];
        for ((tr, g), delta) in traces.iter().zip(g.chunks(n)).zip(out.chunks_mut(n)) {
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            psc_error_into(g, params, &mut e);
            match cfg.method {
                Method::Na => na::aggregated_gradient_into(tr, &e, params, &cfg.na, delta)?,
                Method::Surrogate => surrogate::surrogate_delta_into(tr, &e, params, &cfg.surrogate, delta),
            }
        }
        Ok(out)
    }

    /// Weight gradients summed over samples in order and multiplied by `scale`.
    pub fn weight_gradients(&self, caches: &[SampleCache], signals: &[SampleSignals], scale: f64) -> Result<Vec<Matrix>> {
        check_len("signals", caches.len(), signals.len())?;
        let n = self.params.n_steps();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let inputs: Vec<&[f64]> = caches
                .iter()
                .map(|c| if idx == 0 { c.input.as_slice() } else { c.layers[idx - 1].output.as_slice() })
                .collect();
            let deltas: Vec<&[f64]> = signals.iter().map(|s| s.deltas[idx].as_slice()).collect();
            let (rows, cols) = layer.spec.weight_shape();
            let grad = match layer.spec {
                LayerSpec::AvgPool2d { .. } => Matrix::zeros(0, 0),
                LayerSpec::Dense { n_in, .. } => {
                    let tm: Vec<Vec<f64>> = inputs.iter().map(|x| time_major(x, n_in, n)).collect();
                    let mut data = vec![0.0; rows * cols];
                    data.par_chunks_mut(cols).with_min_len(8).enumerate().for_each(|(i, row)| {
                        for (x, d) in tm.iter().zip(&deltas) {
                            for t in 0..n {
                                let dv = d[i * n + t];
                                if dv != 0.0 {
                                    axpy(dv * scale, &x[t * n_in..(t + 1) * n_in], row);
                                }
                            }
                        }
                    });
                    Matrix::from_vec(rows, cols, data)
                }
                LayerSpec::Conv2d { .. } => {
                    let mut data = vec![0.0; rows * cols];
                    for (x, d) in inputs.iter().zip(&deltas) {
                        layers::conv2d_backward(&layer.spec, layer.state.weights.as_slice(), x, d, n, Some(&mut data), None);
                    }
                    data.iter_mut().for_each(|v| *v *= scale);
                    Matrix::from_vec(rows, cols, data)
                }
            };
            grads.push(grad);
        }
        Ok(grads)
    }

    /// Backward pass over the cached batch; returns batch-mean weight gradients.
    pub fn model_backward(&self, g_out: Vec<Vec<Vec<f64>>>, cfg: &BackwardConfig) -> Result<Vec<Matrix>> {
        let caches = self.cache.as_deref().ok_or(SnnError::MissingCache)?;
        check_len("batch g", caches.len(), g_out.len())?;
        let signals = caches
            .par_iter()
            .zip(g_out)
            .map(|(c, g)| self.backward_sample(c, g, cfg))
            .collect::<Result<Vec<_>>>()?;
        let scale = if caches.is_empty() { 0.0 } else { 1.0 / caches.len() as f64 };
        self.weight_gradients(caches, &signals, scale)
    }

    /// One optimizer step over every layer with weights.
    pub fn apply_gradients(&mut self, grads: &[Matrix], opt: &AdamW) -> Result<()> {
        check_len("gradients", self.layers.len(), grads.len())?;
        for (idx, g) in grads.iter().enumerate() {
            if g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(SnnError::NonFiniteGradient { layer: idx });
            }
        }
        self.step += 1;
        for (idx, (layer, g)) in self.layers.iter_mut().zip(grads).enumerate() {
            if layer.spec.is_spiking() {
                adamw_step(&mut layer.state, g, opt, self.step, idx)?;
            }
        }
        Ok(())
    }

    /// Output `g` for every cached sample against per-sample target trains, plus the mean loss.
    pub fn loss_and_g(&self, caches: &[SampleCache], targets: &[Vec<SpikeTrain>]) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
        check_len("targets", caches.len(), targets.len())?;
        let kernel = psc_kernel(&self.params);
        let mut total = 0.0;
        let mut gs = Vec::with_capacity(caches.len());
        for (c, d) in caches.iter().zip(targets) {
            let (l, g) = van_rossum_loss(&self.output_pscs(c), d, &kernel)?;
            total += l;
            gs.push(g);
        }
        let mean = if caches.is_empty() { 0.0 } else { total / caches.len() as f64 };
        Ok((mean, gs))
    }
}

fn init_weights<R: Rng + ?Sized>(spec: &LayerSpec, dense_init: WeightInit, rng: &mut R) -> Matrix {
    let (rows, cols) = spec.weight_shape();
    let fan_in = cols.max(1) as f64;
    let scheme = match spec {
        LayerSpec::Dense { .. } => dense_init,
        _ => spec.init_scheme(),
    };
    let data: Vec<f64> = match scheme {
        WeightInit::KaimingNormal => {
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            (0..rows * cols).map(|_| normal.sample(rng)).collect()
        }
        WeightInit::KaimingUniform => {
            let bound = (6.0 / fan_in).sqrt();
            let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
            (0..rows * cols).map(|_| uniform.sample(rng)).collect()
        }
        WeightInit::UniformFanIn => {
            let bound = 1.0 / fan_in.sqrt();
            let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
            (0..rows * cols).map(|_| uniform.sample(rng)).collect()
        }
        WeightInit::None => Vec::new(),
    };
    Matrix::from_vec(rows, cols, data)
}

pub(crate) fn time_major(x: &[f64], n_neurons: usize, n_steps: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for j in 0..n_neurons {
        for t in 0..n_steps {
            out[t * n_neurons + j] = x[j * n_steps + t];
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// `c_i[t] = sum_j w_ij x_j[t]`, neuron-major output.
pub(crate) fn dense_currents(w: &Matrix, x: &[f64], n_in: usize, n_out: usize, n_steps: usize) -> Vec<f64> {
    let xt = time_major(x, n_in, n_steps);
    let mut c = vec![0.0; n_out * n_steps];
    c.chunks_mut(n_steps).enumerate().for_each(|(i, ci)| {
        let row = w.row(i);
        for (t, v) in ci.iter_mut().enumerate() {
            *v = dot(row, &xt[t * n_in..(t + 1) * n_in]);
        }
    });
    c
}

/// `g_j[t] = sum_i w_ij delta_i[t]`, neuron-major output.
fn dense_upstream(w: &Matrix, delta: &[f64], n_in: usize, n_out: usize, n_steps: usize) -> Vec<f64> {
    let mut gt = vec![0.0; n_in * n_steps];
    for (t, gt_t) in gt.chunks_mut(n_in).enumerate() {
        for i in 0..n_out {
            let d = delta[i * n_steps + t];
            if d != 0.0 {
                axpy(d, w.row(i), gt_t);
            }
        }
    }
    let mut g = vec![0.0; n_in * n_steps];
    for t in 0..n_steps {
        for j in 0..n_in {
            g[j * n_steps + t] = gt[t * n_in + j];
        }
    }
    g
}
