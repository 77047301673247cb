//! Discrete-time leaky integrate-and-fire dynamics.
//!
//! Steps run `t = 1..=N_t` and are stored at indices `0..N_t`. The state before
//! the first step is `u = 0, a = 0, s = 0`, so
//!
//! ```text
//! u[t] = (1 - 1/tau_m) * u[t-1] * (1 - s[t-1]) + c[t]
//! s[t] = 1  iff  u[t] >= theta
//! a[t] = (1 - 1/tau_s) * a[t-1] + s[t] / tau_s
//! ```
//!
//! which makes `a` the causal convolution of `s` with
//! `sigma[k] = (1/tau_s) (1 - 1/tau_s)^k`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result, SnnError};

/// Constants shared by every neuron of a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    tau_m: f64,
    tau_s: f64,
    theta: f64,
    n_steps: usize,
}

impl NeuronParams {
    pub fn new(tau_m: f64, tau_s: f64, theta: f64, n_steps: usize) -> Result<Self> {
        if !(tau_m.is_finite() && tau_m > 1.0) {
            return Err(SnnError::InvalidParams(format!("tau_m must be > 1, got {tau_m}")));
        }
        if !(tau_s.is_finite() && tau_s > 1.0) {
            return Err(SnnError::InvalidParams(format!("tau_s must be > 1, got {tau_s}")));
        }
        if !theta.is_finite() {
            return Err(SnnError::InvalidParams(format!("theta must be finite, got {theta}")));
        }
        if n_steps == 0 {
            return Err(SnnError::InvalidParams("n_steps must be >= 1".into()));
        }
        Ok(Self {
            tau_m,
            tau_s,
            theta,
            n_steps,
        })
    }

    pub fn tau_m(&self) -> f64 {
        self.tau_m
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Same constants with a different window length.
    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        Self::new(self.tau_m, self.tau_s, self.theta, n_steps)
    }

    /// Membrane carry-over factor `1 - 1/tau_m`.
    #[inline]
    pub fn membrane_decay(&self) -> f64 {
        1.0 - 1.0 / self.tau_m
    }

    /// Synaptic carry-over factor `1 - 1/tau_s`.
    #[inline]
    pub fn synaptic_decay(&self) -> f64 {
        1.0 - 1.0 / self.tau_s
    }

    #[inline]
    pub(crate) fn fires(&self, u: f64) -> bool {
        u >= self.theta
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpikeTrain(Vec<bool>);

impl SpikeTrain {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn silent(n_steps: usize) -> Self {
        Self(vec![false; n_steps])
    }

    /// Builds a train from 0/1 values; anything other than 0 or 1 is rejected.
    pub fn from_binary(values: &[u8]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(SnnError::InvalidParams(format!(
                    "spike value {v} at step {i} is not binary"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    #[inline]
    pub fn get(&self, t: usize) -> bool {
        self.0[t]
    }

    #[inline]
    pub fn value(&self, t: usize) -> f64 {
        if self.0[t] {
            1.0
        } else {
            0.0
        }
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn to_binary(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

/// Postsynaptic current produced by filtering a spike train with the synaptic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psc(Vec<f64>);

impl Psc {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n_steps: usize) -> Self {
        Self(vec![0.0; n_steps])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Forward record of one neuron over the simulation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronTrace {
    /// Membrane potential.
    pub u: Vec<f64>,
    pub s: SpikeTrain,
    pub a: Psc,
    /// Total synaptic input `sum_j w_ij a_j`.
    pub c: Vec<f64>,
}

impl NeuronTrace {
    pub fn n_steps(&self) -> usize {
        self.u.len()
    }

    pub fn silent(n_steps: usize) -> Self {
        Self {
            u: vec![0.0; n_steps],
            s: SpikeTrain::silent(n_steps),
            a: Psc::zeros(n_steps),
            c: vec![0.0; n_steps],
        }
    }
}

/// The first-order synaptic kernel `sigma[t] = (1/tau_s)(1 - 1/tau_s)^t`, `t = 0..N_t`.
pub fn psc_kernel(params: &NeuronParams) -> Vec<f64> {
    let decay = params.synaptic_decay();
    let mut value = 1.0 / params.tau_s();
    let mut kernel = Vec::with_capacity(params.n_steps());
    for _ in 0..params.n_steps() {
        kernel.push(value);
        value *= decay;
    }
    kernel
}

/// Runs the PSC recurrence over a spike train.
pub fn psc_from_spikes(s: &SpikeTrain, params: &NeuronParams) -> Result<Psc> {
    check_len("psc_from_spikes", params.n_steps(), s.len())?;
    Ok(Psc(psc_recurrence(s.bits(), params)))
}

pub(crate) fn psc_recurrence(bits: &[bool], params: &NeuronParams) -> Vec<f64> {
    let decay = params.synaptic_decay();
    let gain = 1.0 / params.tau_s();
    let mut prev = 0.0;
    bits.iter()
        .map(|&fired| {
            prev = decay * prev + if fired { gain } else { 0.0 };
            prev
        })
        .collect()
}

/// Causal convolution `(kernel * d)[t] = sum_{k <= t} d[k] kernel[t - k]`.
pub fn convolve_spikes(d: &SpikeTrain, kernel: &[f64]) -> Result<Vec<f64>> {
    check_len("convolve_spikes", kernel.len(), d.len())?;
    let n = kernel.len();
    let mut out = vec![0.0; n];
    for (k, _) in d.bits().iter().enumerate().filter(|(_, &b)| b) {
        for t in k..n {
            out[t] += kernel[t - k];
        }
    }
    Ok(out)
}

/// Integrates a synaptic input sequence from rest.
pub fn lif_forward(c: &[f64], params: &NeuronParams) -> Result<NeuronTrace> {
    check_len("lif_forward", params.n_steps(), c.len())?;
    check_finite("lif_forward input", c)?;
    Ok(integrate(c.to_vec(), params))
}

/// Forward integration without validation, for callers that already own checked input.
pub(crate) fn integrate(c: Vec<f64>, params: &NeuronParams) -> NeuronTrace {
    let n = c.len();
    let alpha = params.membrane_decay();
    let mut u = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut carry = 0.0;
    for &input in &c {
        let v = alpha * carry + input;
        let fired = params.fires(v);
        u.push(v);
        s.push(fired);
        carry = if fired { 0.0 } else { v };
    }
    let a = psc_recurrence(&s, params);
    NeuronTrace {
        u,
        s: SpikeTrain(s),
        a: Psc(a),
        c,
    }
}
