//! Python bindings for the `na_snn` crate.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use na_snn::data::{EncodedSample, SampleTarget};
use na_snn::harness::{self, Experiment, RunConfig};
use na_snn::network::loss::classify_with;
use na_snn::network::train::{train_step, TrainConfig};
use na_snn::network::{parse_architecture, Method};
use na_snn::{lif, mp, na, Matrix, SnnError};

fn py_err(e: SnnError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bits(s: &lif::SpikeTrain) -> Vec<bool> {
    s.bits().to_vec()
}

#[pyclass(name = "NeuronParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNeuronParams(lif::NeuronParams);

#[pymethods]
impl PyNeuronParams {
    #[new]
    #[pyo3(signature = (tau_m = 5.0, tau_s = 2.0, theta = 1.0, n_steps = 30))]
    fn new(tau_m: f64, tau_s: f64, theta: f64, n_steps: usize) -> PyResult<Self> {
        lif::NeuronParams::new(tau_m, tau_s, theta, n_steps).map(Self).map_err(py_err)
    }

    #[getter]
    fn tau_m(&self) -> f64 {
        self.0.tau_m()
    }

    #[getter]
    fn tau_s(&self) -> f64 {
        self.0.tau_s()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.0.n_steps()
    }

    fn __repr__(&self) -> String {
        format!(
            "NeuronParams(tau_m={}, tau_s={}, theta={}, n_steps={})",
            self.0.tau_m(),
            self.0.tau_s(),
            self.0.theta(),
            self.0.n_steps()
        )
    }
}

/// Membrane potential, spikes, PSC and synaptic input of one simulated neuron.
#[pyclass(name = "NeuronTrace", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNeuronTrace(lif::NeuronTrace);

#[pymethods]
impl PyNeuronTrace {
    #[getter]
    fn u(&self) -> Vec<f64> {
        self.0.u.clone()
    }

    #[getter]
    fn spikes(&self) -> Vec<bool> {
        bits(&self.0.s)
    }

    #[getter]
    fn psc(&self) -> Vec<f64> {
        self.0.a.values().to_vec()
    }

    #[getter]
    fn currents(&self) -> Vec<f64> {
        self.0.c.clone()
    }

    fn __len__(&self) -> usize {
        self.0.n_steps()
    }
}

#[pyfunction]
fn lif_forward(currents: Vec<f64>, params: &PyNeuronParams) -> PyResult<PyNeuronTrace> {
    lif::lif_forward(&currents, &params.0).map(PyNeuronTrace).map_err(py_err)
}

/// `trace ⊞ eps`: adds `eps` to the synaptic input and re-integrates.
#[pyfunction]
fn mp_add(trace: &PyNeuronTrace, eps: Vec<f64>, params: &PyNeuronParams) -> PyResult<PyNeuronTrace> {
    mp::mp_add(&trace.0, &mp::Perturbation(eps), &params.0)
        .map(PyNeuronTrace)
        .map_err(py_err)
}

/// `u_prime ⊟ trace`.
#[pyfunction]
fn mp_sub(u_prime: &PyNeuronTrace, trace: &PyNeuronTrace, params: &PyNeuronParams) -> PyResult<Vec<f64>> {
    mp::mp_sub(&u_prime.0, &trace.0, &params.0).map(|p| p.0).map_err(py_err)
}

#[pyfunction]
fn mp_dist(u_prime: &PyNeuronTrace, trace: &PyNeuronTrace, params: &PyNeuronParams) -> PyResult<f64> {
    mp::mp_dist(&u_prime.0, &trace.0, &params.0).map_err(py_err)
}

/// Single-flip neighbors as `(step, signed_distance, trace)` tuples.
#[pyfunction]
fn sns_neighbors(trace: &PyNeuronTrace, params: &PyNeuronParams) -> PyResult<Vec<(usize, f64, PyNeuronTrace)>> {
    let hood = mp::sns_neighborhood(&trace.0, &params.0).map_err(py_err)?;
    Ok(hood
        .members
        .into_iter()
        .map(|m| (m.index, m.signed_dist, PyNeuronTrace(m.trace)))
        .collect())
}

#[pyfunction]
fn spike_train_index(spikes: Vec<u8>) -> PyResult<u64> {
    let s = lif::SpikeTrain::from_binary(&spikes).map_err(py_err)?;
    mp::spike_train_index(&s).map_err(py_err)
}

/// PSC error signal `dL/da` from the instantaneous error `g`.
#[pyfunction]
fn psc_error(g: Vec<f64>, params: &PyNeuronParams) -> Vec<f64> {
    na::psc_error(&g, &params.0)
}

/// Instantaneous output error `a - kernel * target`.
#[pyfunction]
fn output_g(psc: Vec<f64>, target: Vec<u8>, params: &PyNeuronParams) -> PyResult<Vec<f64>> {
    let target = lif::SpikeTrain::from_binary(&target).map_err(py_err)?;
    na::output_g(&lif::Psc::new(psc), &target, &lif::psc_kernel(&params.0)).map_err(py_err)
}

/// A network together with its training settings.
///
/// Inputs are flat, neuron-major current sequences: `input_size * n_steps` values.
#[pyclass(name = "Model")]
struct PyModel {
    model: na_snn::Model,
    cfg: TrainConfig,
    iteration: usize,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (architecture, n_steps = 5, method = "na", learning_rate = 5e-4, seed = 0))]
    fn new(architecture: &str, n_steps: usize, method: &str, learning_rate: f64, seed: u64) -> PyResult<Self> {
        let method: Method = method.parse().map_err(py_err)?;
        let cfg = TrainConfig {
            n_steps,
            method,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(py_err)?;
        let specs = parse_architecture(architecture).map_err(py_err)?;
        let mut rng = harness::derived_rng(seed, 0);
        let model = cfg.build_model(&specs, &mut rng).map_err(py_err)?;
        Ok(Self { model, cfg, iteration: 0 })
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.model.input_size()
    }

    #[getter]
    fn output_size(&self) -> usize {
        self.model.output_size()
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.model.layers().len()
    }

    /// Output spike trains for one input.
    fn forward(&self, currents: Vec<f64>) -> PyResult<Vec<Vec<bool>>> {
        let cache = self.model.forward_sample(&currents).map_err(py_err)?;
        Ok(self.model.output_spikes(&cache).iter().map(bits).collect())
    }

    fn predict(&self, currents: Vec<f64>) -> PyResult<usize> {
        let cache = self.model.forward_sample(&currents).map_err(py_err)?;
        Ok(classify_with(
            self.cfg.decision_rule,
            &self.model.output_pscs(&cache),
            &self.model.output_spikes(&cache),
        ))
    }

    /// One optimizer step on a labelled batch; returns the batch loss before the update.
    fn train_batch(&mut self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        if inputs.len() != labels.len() {
            return Err(PyValueError::new_err(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let samples: Vec<EncodedSample> = inputs
            .into_iter()
            .zip(labels)
            .map(|(currents, label)| EncodedSample {
                currents,
                target: SampleTarget::Label(label),
            })
            .collect();
        let batch: Vec<&EncodedSample> = samples.iter().collect();
        let out = train_step(&mut self.model, &batch, &self.cfg, self.iteration).map_err(py_err)?;
        self.iteration += 1;
        Ok(out.loss)
    }

    /// Weights of one layer as rows of postsynaptic neurons.
    fn weights(&self, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        if layer >= self.model.layers().len() {
            return Err(PyValueError::new_err(format!("no layer {layer}")));
        }
        let w = self.model.weights(layer);
        Ok((0..w.rows()).map(|r| w.row(r).to_vec()).collect())
    }

    fn set_weights(&mut self, layer: usize, rows: Vec<Vec<f64>>) -> PyResult<()> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("weight rows differ in length"));
        }
        let n = rows.len();
        let m = Matrix::from_vec(n, cols, rows.into_iter().flatten().collect());
        self.model.set_weights(layer, m).map_err(py_err)
    }
}

fn experiment(name: &str) -> PyResult<Experiment> {
    match name {
        "single-neuron" => Ok(Experiment::SingleNeuron),
        "mpdist-eval" => Ok(Experiment::MpdistEval),
        "bench" => Ok(Experiment::Bench),
        "train" => Ok(Experiment::Train),
        other => Err(PyValueError::new_err(format!("unknown experiment `{other}`"))),
    }
}

/// Runs an experiment with its defaults overlaid by `config` (TOML text).
///
/// Writes the run directory when `out` is given and returns the manifest as JSON text.
#[pyfunction]
#[pyo3(signature = (name, config = None, out = None))]
fn run_experiment(py: Python<'_>, name: &str, config: Option<&str>, out: Option<PathBuf>) -> PyResult<String> {
    let exp = experiment(name)?;
    let base = RunConfig::defaults(exp);
    let cfg = match config {
        Some(text) => RunConfig::from_toml_over(base, text).map_err(PyValueError::new_err)?,
        None => base,
    };
    let manifest = py
        .detach(|| -> na_snn::Result<_> {
            Ok(match exp {
                Experiment::SingleNeuron => {
                    let run = harness::run_single_neuron(&cfg)?;
                    if let Some(dir) = &out {
                        run.write(dir)?;
                    }
                    run.manifest()
                }
                Experiment::MpdistEval => {
                    let run = harness::run_mpdist_eval(&cfg)?;
                    if let Some(dir) = &out {
                        run.write(dir)?;
                    }
                    run.manifest()
                }
                Experiment::Bench => {
                    let run = harness::run_bench(&cfg)?;
                    if let Some(dir) = &out {
                        run.write(dir)?;
                    }
                    run.manifest()
                }
                Experiment::Train => {
                    let run = harness::run_train(&cfg)?;
                    if let Some(dir) = &out {
                        run.write(dir)?;
                    }
                    run.manifest()
                }
            })
        })
        .map_err(py_err)?;
    serde_json::to_string(&manifest).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "na_snn")]
fn na_snn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNeuronParams>()?;
    m.add_class::<PyNeuronTrace>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(lif_forward, m)?)?;
    m.add_function(wrap_pyfunction!(mp_add, m)?)?;
    m.add_function(wrap_pyfunction!(mp_sub, m)?)?;
    m.add_function(wrap_pyfunction!(mp_dist, m)?)?;
    m.add_function(wrap_pyfunction!(sns_neighbors, m)?)?;
    m.add_function(wrap_pyfunction!(spike_train_index, m)?)?;
    m.add_function(wrap_pyfunction!(psc_error, m)?)?;
    m.add_function(wrap_pyfunction!(output_g, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
