//! Dataset ingestion, input encoding, synthetic inputs and run artifacts.

pub mod idx;
pub mod manifest;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnnError};
use crate::lif::{NeuronParams, Psc, SpikeTrain};

pub use idx::{load_mnist_idx, DigitImage};
pub use manifest::{read_manifest, write_metrics, MetricsTable, RunManifest, MANIFEST_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum SampleTarget {
    Label(usize),
    Trains(Vec<SpikeTrain>),
}

/// Input currents, neuron-major `[channel][t]`, with the training target.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub currents: Vec<f64>,
    pub target: SampleTarget,
}

/// Constant current injection: `current[ch][t] = gain * pixel / 255` for every step.
pub fn encode_image_current(pixels: &[f64], params: &NeuronParams, gain: f64) -> Result<Vec<f64>> {
    let n = params.n_steps();
    let mut out = Vec::with_capacity(pixels.len() * n);
    for &p in pixels {
        if !(0.0..=255.0).contains(&p) {
            return Err(SnnError::PixelOutOfRange { value: p });
        }
        let v = gain * p / 255.0;
        out.extend(std::iter::repeat_n(v, n));
    }
    Ok(out)
}

pub fn encode_digit(img: &DigitImage, params: &NeuronParams, gain: f64) -> Result<EncodedSample> {
    let pixels: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p)).collect();
    Ok(EncodedSample {
        currents: encode_image_current(&pixels, params, gain)?,
        target: SampleTarget::Label(usize::from(img.label)),
    })
}

/// I.i.d. Bernoulli spikes drawn neuron by neuron, step by step.
pub fn bernoulli_spike_trains_with<R: Rng + ?Sized>(n_neurons: usize, p: f64, n_steps: usize, rng: &mut R) -> Vec<SpikeTrain> {
    let p = p.clamp(0.0, 1.0);
    (0..n_neurons)
        .map(|_| SpikeTrain::new((0..n_steps).map(|_| rng.random_bool(p)).collect()))
        .collect()
}

pub fn bernoulli_spike_trains(n_neurons: usize, p: f64, n_steps: usize, seed: u64) -> Vec<SpikeTrain> {
    bernoulli_spike_trains_with(n_neurons, p, n_steps, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub pscs: Vec<Psc>,
    /// Set when the values had zero variance and were only centered.
    pub zero_variance: bool,
}

/// Standardizes with the mean and population standard deviation over all neurons and steps.
pub fn normalize_pscs(pscs: &[Psc]) -> Normalized {
    let count: usize = pscs.iter().map(Psc::len).sum();
    if count == 0 {
        return Normalized {
            pscs: pscs.to_vec(),
            zero_variance: true,
        };
    }
    let all = || pscs.iter().flat_map(|a| a.values().iter().copied());
    let mean = all().sum::<f64>() / count as f64;
    let var = all().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    let std = var.sqrt();
    let zero_variance = !(std > 0.0);
    let scale = if zero_variance { 1.0 } else { 1.0 / std };
    Normalized {
        pscs: pscs
            .iter()
            .map(|a| Psc::new(a.values().iter().map(|v| (v - mean) * scale).collect()))
            .collect(),
        zero_variance,
    }
}

/// Concatenates PSCs into a neuron-major current buffer.
pub fn flatten_pscs(pscs: &[Psc]) -> Vec<f64> {
    pscs.iter().flat_map(|a| a.values().iter().copied()).collect()
}
