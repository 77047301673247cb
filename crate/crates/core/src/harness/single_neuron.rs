//! One output neuron learning a random target spike train from random inputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mpdist::{classify_transition, TransitionRecord};
use super::{derived_rng, median, RunConfig};
use crate::data::manifest::fmt_f64;
use crate::data::{bernoulli_spike_trains_with, flatten_pscs, normalize_pscs, EncodedSample, MetricsTable, RunManifest, SampleTarget};
use crate::error::{Result, SnnError};
use crate::lif::{psc_from_spikes, Psc, SpikeTrain};
use crate::network::train::{train_step, TrainConfig};
use crate::network::LayerSpec;

pub const DEFAULT_LEARNING_RATE: f64 = 0.003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingleNeuronConfig {
    pub n_inputs: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub iterations: usize,
    pub rounds: usize,
}

impl Default for SingleNeuronConfig {
    fn default() -> Self {
        Self {
            n_inputs: 200,
            p_in: 0.05,
            p_out: 0.2,
            iterations: 200,
            rounds: 500,
        }
    }
}

impl SingleNeuronConfig {
    /// Departures from the reference setting; reported, never fatal.
    pub fn warnings(&self, train: &TrainConfig) -> Vec<String> {
        let mut w = Vec::new();
        let reference = [
            ("n_steps", train.n_steps as f64, 30.0),
            ("n_inputs", self.n_inputs as f64, 200.0),
            ("p_in", self.p_in, 0.05),
            ("p_out", self.p_out, 0.2),
            ("iterations", self.iterations as f64, 200.0),
            ("tau_s", train.tau_s, 2.0),
            ("tau_m", train.tau_m, 5.0),
        ];
        for (name, value, expected) in reference {
            if value != expected {
                w.push(format!("{name} = {value} differs from the reference value {expected}"));
            }
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                w.push(format!("{name} = {p} is outside [0, 1] and will be clamped"));
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round: usize,
    /// Loss before update `k`, for `k = 0..=iterations`.
    pub losses: Vec<f64>,
    pub matched: Vec<bool>,
    /// First `k` whose output equals the target.
    pub convergence: Option<usize>,
    pub zero_variance: bool,
    pub transitions: Vec<TransitionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleNeuronRun {
    pub config: RunConfig,
    pub rounds: Vec<RoundResult>,
    pub warnings: Vec<String>,
}

/// Inputs and target for one round, drawn from the round's own generator.
pub fn round_task(cfg: &RunConfig, round: usize) -> Result<(EncodedSample, bool, rand_chacha::ChaCha8Rng)> {
    let sn = &cfg.single_neuron;
    let params = cfg.train.params()?;
    let mut rng = derived_rng(cfg.train.seed, round as u64);
    let inputs = bernoulli_spike_trains_with(sn.n_inputs, sn.p_in, params.n_steps(), &mut rng);
    let target = bernoulli_spike_trains_with(1, sn.p_out, params.n_steps(), &mut rng);
    let pscs: Vec<Psc> = inputs.iter().map(|s| psc_from_spikes(s, &params)).collect::<Result<_>>()?;
    let normalized = normalize_pscs(&pscs);
    let sample = EncodedSample {
        currents: flatten_pscs(&normalized.pscs),
        target: SampleTarget::Trains(target),
    };
    Ok((sample, normalized.zero_variance, rng))
}

fn run_round(cfg: &RunConfig, round: usize) -> Result<RoundResult> {
    let sn = &cfg.single_neuron;
    let params = cfg.train.params()?;
    let (sample, zero_variance, mut rng) = round_task(cfg, round)?;
    let mut model = cfg.train.build_model(&[LayerSpec::dense(sn.n_inputs, 1)?], &mut rng)?;
    let mut losses = Vec::with_capacity(sn.iterations + 1);
    let mut matched = Vec::with_capacity(sn.iterations + 1);
    let mut transitions = Vec::new();
    let SampleTarget::Trains(target) = &sample.target else {
        unreachable!("round targets are spike trains");
    };
    for k in 0..sn.iterations {
        let step = train_step(&mut model, &[&sample], &cfg.train, k)?;
        losses.push(step.loss);
        matched.push(step.outputs[0] == *target);
        for snap in &step.snapshots {
            transitions.push(classify_transition(round, snap, &params)?);
        }
    }
    let cache = model.forward_sample(&sample.currents)?;
    let (loss, _) = model.loss_and_g(std::slice::from_ref(&cache), std::slice::from_ref(target))?;
    losses.push(loss);
    matched.push(model.output_spikes(&cache) == *target);
    Ok(RoundResult {
        round,
        convergence: matched.iter().position(|&m| m),
        losses,
        matched,
        zero_variance,
        transitions,
    })
}

/// Runs every round independently; rounds are seeded from the master seed and their index.
pub fn run_single_neuron(cfg: &RunConfig) -> Result<SingleNeuronRun> {
    cfg.train.validate()?;
    let warnings = cfg.single_neuron.warnings(&cfg.train);
    let rounds = (0..cfg.single_neuron.rounds)
        .into_par_iter()
        .map(|r| run_round(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(SingleNeuronRun {
        config: cfg.clone(),
        rounds,
        warnings,
    })
}

impl SingleNeuronRun {
    pub fn iterations(&self) -> usize {
        self.config.single_neuron.iterations
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        self.rounds.iter().filter(|r| r.convergence.is_some()).count() as f64 / self.rounds.len() as f64
    }

    /// Median convergence iteration; rounds that never match count as never (infinite).
    pub fn median_convergence(&self) -> f64 {
        let v: Vec<f64> = self
            .rounds
            .iter()
            .map(|r| r.convergence.map_or(f64::INFINITY, |c| c as f64))
            .collect();
        median(&v)
    }

    /// Fraction of rounds whose loss strictly decreases over the first `k` updates.
    pub fn early_decrease_fraction(&self, k: usize) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        let ok = self
            .rounds
            .iter()
            .filter(|r| r.losses.iter().take(k + 1).collect::<Vec<_>>().windows(2).all(|w| w[1] < w[0]))
            .count();
        ok as f64 / self.rounds.len() as f64
    }

    /// Whether the mean loss curve strictly decreases over the first `k` updates.
    pub fn mean_curve_decreasing(&self, k: usize) -> bool {
        let curve = self.mean_curve();
        curve.iter().take(k + 1).collect::<Vec<_>>().windows(2).all(|w| w[1] < w[0])
    }

    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.iterations() + 1;
        let r = self.rounds.len().max(1) as f64;
        (0..n)
            .map(|k| self.rounds.iter().map(|x| x.losses[k]).sum::<f64>() / r)
            .collect()
    }

    pub fn std_curve(&self) -> Vec<f64> {
        let mean = self.mean_curve();
        let r = self.rounds.len().max(1) as f64;
        mean.iter()
            .enumerate()
            .map(|(k, m)| (self.rounds.iter().map(|x| (x.losses[k] - m).powi(2)).sum::<f64>() / r).sqrt())
            .collect()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.rounds.iter().flat_map(|r| r.transitions.iter())
    }

    /// Per-iteration losses, one row per round and iteration.
    pub fn metrics_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["round", "iteration", "loss", "output_matches"]);
        for r in &self.rounds {
            for (k, (l, m)) in r.losses.iter().zip(&r.matched).enumerate() {
                t.push(vec![r.round.to_string(), k.to_string(), fmt_f64(*l), u8::from(*m).to_string()])?;
            }
        }
        Ok(t)
    }

    pub fn rounds_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["round", "convergence_iteration", "final_loss", "zero_variance"]);
        for r in &self.rounds {
            t.push(vec![
                r.round.to_string(),
                r.convergence.map_or_else(|| "none".to_string(), |c| c.to_string()),
                fmt_f64(*r.losses.last().unwrap_or(&f64::NAN)),
                u8::from(r.zero_variance).to_string(),
            ])?;
        }
        Ok(t)
    }

    pub fn manifest(&self) -> RunManifest {
        let mut m = RunManifest::new("single-neuron", self.config.train.seed, self.config.to_json());
        m.summary = serde_json::json!({
            "method": self.config.train.method.as_str(),
            "rounds": self.rounds.len(),
            "converged_fraction": self.converged_fraction(),
            "median_convergence_iteration": finite_or_null(self.median_convergence()),
            "final_mean_loss": self.mean_curve().last().copied().unwrap_or(f64::NAN),
        });
        if self.rounds.iter().any(|r| r.zero_variance) {
            m.flag("zero_variance_normalization");
        }
        for w in &self.warnings {
            m.flag(format!("warning: {w}"));
        }
        m
    }

    pub fn write(&self, dir: &std::path::Path) -> Result<std::path::PathBuf> {
        let metrics = self.metrics_table()?;
        let rounds = self.rounds_table()?;
        crate::data::write_metrics(dir, &self.manifest(), &[("metrics.csv", &metrics), ("rounds.csv", &rounds)])
    }
}

pub(crate) fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// Target spike train of a round, for inspection.
pub fn round_target(cfg: &RunConfig, round: usize) -> Result<SpikeTrain> {
    match round_task(cfg, round)?.0.target {
        SampleTarget::Trains(mut t) => t.pop().ok_or_else(|| SnnError::InvalidConfig("empty target".into())),
        SampleTarget::Label(_) => unreachable!("round targets are spike trains"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Experiment;

    #[test]
    fn silent_task_is_solved_at_start() {
        let mut cfg = RunConfig::defaults(Experiment::SingleNeuron);
        cfg.single_neuron.p_in = 0.0;
        cfg.single_neuron.p_out = 0.0;
        cfg.single_neuron.rounds = 2;
        cfg.single_neuron.iterations = 3;
        let run = run_single_neuron(&cfg).unwrap();
        for r in &run.rounds {
            assert_eq!(r.losses[0], 0.0);
            assert_eq!(r.convergence, Some(0));
            assert!(r.zero_variance);
        }
        assert!(!run.warnings.is_empty());
    }

    #[test]
    fn rounds_are_reproducible() {
        let mut cfg = RunConfig::defaults(Experiment::SingleNeuron);
        cfg.single_neuron.rounds = 3;
        cfg.single_neuron.iterations = 5;
        let a = run_single_neuron(&cfg).unwrap();
        let b = run_single_neuron(&cfg).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_ne!(round_target(&cfg, 0).unwrap(), round_target(&cfg, 1).unwrap());
    }
}
