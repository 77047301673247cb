//! Mini-batch training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{classify_with, AdamW, BackwardConfig, DecisionRule, Method, Model, SampleCache, TargetEncoding, WeightInit};
use crate::data::{EncodedSample, SampleTarget};
use crate::error::{Result, SnnError};
use crate::lif::{NeuronParams, NeuronTrace, SpikeTrain};
use crate::na::NaConfig;
use crate::surrogate::SurrogateParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub tau_m: f64,
    pub tau_s: f64,
    pub theta: f64,
    pub n_steps: usize,
    pub na: NaConfig,
    pub surrogate: SurrogateParams,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub target_encoding: TargetEncoding,
    pub decision_rule: DecisionRule,
    /// Initializer for fully connected layers; convolutions always use Kaiming-uniform.
    pub dense_init: WeightInit,
    /// Keep per-neuron traces before and after every update.
    pub record_snapshots: bool,
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate towards zero over the configured epochs.
    Cosine,
}

impl LrSchedule {
    /// Rate for zero-based `epoch` out of `epochs`.
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let x = epoch as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Na,
            tau_m: 5.0,
            tau_s: 2.0,
            theta: 1.0,
            n_steps: 5,
            na: NaConfig::default(),
            surrogate: SurrogateParams::default(),
            learning_rate: 5e-4,
            lr_schedule: LrSchedule::Constant,
            weight_decay: 0.01,
            batch_size: 32,
            epochs: 1,
            seed: 0,
            target_encoding: TargetEncoding::default(),
            decision_rule: DecisionRule::default(),
            dense_init: WeightInit::KaimingNormal,
            record_snapshots: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SnnError::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(SnnError::InvalidConfig(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(SnnError::InvalidConfig("batch size must be >= 1".into()));
        }
        SurrogateParams::new(self.surrogate.window, self.surrogate.kind)?;
        Ok(())
    }

    pub fn params(&self) -> Result<NeuronParams> {
        NeuronParams::new(self.tau_m, self.tau_s, self.theta, self.n_steps)
    }

    pub fn backward(&self) -> BackwardConfig {
        BackwardConfig {
            method: self.method,
            na: self.na,
            surrogate: self.surrogate,
        }
    }

    /// Fresh model for `specs` with this configuration's neuron parameters and initializer.
    pub fn build_model<R: Rng + ?Sized>(&self, specs: &[super::LayerSpec], rng: &mut R) -> Result<Model> {
        Model::with_dense_init(self.params()?, specs, self.dense_init, rng)
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

/// One neuron's trace before and after a weight update on the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub sample: usize,
    pub layer: usize,
    pub neuron: usize,
    pub before: NeuronTrace,
    pub after: SpikeTrain,
    pub after_u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub forward_s: f64,
    pub backward_s: f64,
    pub optimizer_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
    /// Output spike trains of every sample before the update.
    pub outputs: Vec<Vec<SpikeTrain>>,
    pub times: PhaseTimes,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochMetrics {
    pub losses: Vec<f64>,
    pub times: Vec<PhaseTimes>,
    pub mean_loss: f64,
    pub accuracy: f64,
    pub snapshots: Vec<Snapshot>,
}

/// Desired output spike trains for a sample.
pub fn sample_targets(sample: &EncodedSample, cfg: &TrainConfig, n_classes: usize) -> Result<Vec<SpikeTrain>> {
    match &sample.target {
        SampleTarget::Label(label) => cfg.target_encoding.encode(*label, n_classes, cfg.n_steps),
        SampleTarget::Trains(trains) => Ok(trains.clone()),
    }
}

/// Forward, loss, backward and one optimizer step on a batch.
pub fn train_step(model: &mut Model, batch: &[&EncodedSample], cfg: &TrainConfig, iteration: usize) -> Result<StepOutcome> {
    let n_classes = model.output_size();
    let targets = batch
        .iter()
        .map(|s| sample_targets(s, cfg, n_classes))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<&[f64]> = batch.iter().map(|s| s.currents.as_slice()).collect();

    let t0 = Instant::now();
    model.model_forward(&inputs)?;
    let forward_s = t0.elapsed().as_secs_f64();

    let caches = model.cached().ok_or(SnnError::MissingCache)?;
    let (loss, g) = model.loss_and_g(caches, &targets)?;
    let outputs: Vec<Vec<SpikeTrain>> = caches.iter().map(|c| model.output_spikes(c)).collect();
    let correct = batch
        .iter()
        .zip(caches)
        .filter(|(s, c)| match s.target {
            SampleTarget::Label(label) => {
                classify_with(cfg.decision_rule, &model.output_pscs(c), &model.output_spikes(c)) == label
            }
            SampleTarget::Trains(ref d) => model.output_spikes(c) == *d,
        })
        .count();

    let t1 = Instant::now();
    let grads = model.model_backward(g, &cfg.backward())?;
    let backward_s = t1.elapsed().as_secs_f64();

    let before = if cfg.record_snapshots { model.cached().map(<[SampleCache]>::to_vec) } else { None };
    model.clear_cache();

    let t2 = Instant::now();
    model.apply_gradients(&grads, &cfg.optimizer())?;
    let optimizer_s = t2.elapsed().as_secs_f64();

    let snapshots = match before {
        Some(before) => {
            let after = model.forward_batch(&inputs)?;
            collect_snapshots(iteration, &before, &after)
        }
        None => Vec::new(),
    };

    Ok(StepOutcome {
        loss,
        correct,
        samples: batch.len(),
        outputs,
        times: PhaseTimes {
            forward_s,
            backward_s,
            optimizer_s,
        },
        snapshots,
    })
}

fn collect_snapshots(iteration: usize, before: &[SampleCache], after: &[SampleCache]) -> Vec<Snapshot> {
    let mut out = Vec::new();
    for (sample, (b, a)) in before.iter().zip(after).enumerate() {
        for (layer, (lb, la)) in b.layers.iter().zip(&a.layers).enumerate() {
            for (neuron, (tb, ta)) in lb.traces.iter().zip(&la.traces).enumerate() {
                out.push(Snapshot {
                    iteration,
                    sample,
                    layer,
                    neuron,
                    before: tb.clone(),
                    after: ta.s.clone(),
                    after_u: ta.u.clone(),
                });
            }
        }
    }
    out
}

/// One pass over `data` in a seeded random order. The incomplete final batch is dropped.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut Model,
    data: &[EncodedSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut metrics = EpochMetrics::default();
    let mut correct = 0;
    let mut seen = 0;
    for (iteration, chunk) in order.chunks_exact(cfg.batch_size).enumerate() {
        let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &data[i]).collect();
        let step = train_step(model, &batch, cfg, iteration)?;
        metrics.losses.push(step.loss);
        metrics.times.push(step.times);
        metrics.snapshots.extend(step.snapshots);
        correct += step.correct;
        seen += step.samples;
    }
    if !metrics.losses.is_empty() {
        metrics.mean_loss = metrics.losses.iter().sum::<f64>() / metrics.losses.len() as f64;
    }
    if seen > 0 {
        metrics.accuracy = correct as f64 / seen as f64;
    }
    Ok(metrics)
}

/// Fraction of labelled samples classified correctly.
pub fn evaluate(model: &Model, data: &[EncodedSample], rule: DecisionRule) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in data.chunks(256) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|s| s.currents.as_slice()).collect();
        let caches = model.forward_batch(&inputs)?;
        for (s, c) in chunk.iter().zip(&caches) {
            let SampleTarget::Label(label) = s.target else {
                return Err(SnnError::InvalidConfig("evaluation needs labelled samples".into()));
            };
            if classify_with(rule, &model.output_pscs(c), &model.output_spikes(c)) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(n: usize, n_steps: usize) -> Vec<EncodedSample> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let mut currents = vec![0.0; 4 * n_steps];
                for t in 0..n_steps {
                    currents[(2 * label) * n_steps + t] = 1.0;
                    currents[(2 * label + 1) * n_steps + t] = 0.8;
                }
                EncodedSample {
                    currents,
                    target: SampleTarget::Label(label),
                }
            })
            .collect()
    }

    #[test]
    fn cosine_schedule_starts_at_base_and_decays() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.rate(0.1, 0, 10), 0.1);
        assert!((s.rate(0.1, 5, 10) - 0.05).abs() < 1e-15);
        let rates: Vec<f64> = (0..10).map(|e| s.rate(0.1, e, 10)).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
        assert!(rates[9] > 0.0);
        assert_eq!(LrSchedule::Constant.rate(0.1, 9, 10), 0.1);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Model::from_architecture(cfg.params().unwrap(), "4-2", &mut rng).unwrap();
        let w0 = model.weights(0).clone();
        let data = toy_data(6, cfg.n_steps);
        let m = train_epoch(&mut model, &data, &cfg, &mut rng).unwrap();
        assert_eq!(model.weights(0), &w0);
        assert_eq!(m.losses.len(), 3);
    }

    #[test]
    fn drops_incomplete_batch() {
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Model::from_architecture(cfg.params().unwrap(), "4-2", &mut rng).unwrap();
        let m = train_epoch(&mut model, &toy_data(7, cfg.n_steps), &cfg, &mut rng).unwrap();
        assert_eq!(m.losses.len(), 1);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = TrainConfig {
            batch_size: 2,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut model = Model::from_architecture(cfg.params().unwrap(), "4-3-2", &mut rng).unwrap();
            let m = train_epoch(&mut model, &toy_data(10, cfg.n_steps), &cfg, &mut rng).unwrap();
            (m.losses, model.weights(1).clone())
        };
        let (l1, w1) = run();
        let (l2, w2) = run();
        assert_eq!(l1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(w1, w2);
    }
}
