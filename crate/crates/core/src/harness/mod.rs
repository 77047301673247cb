//! Experiment drivers behind the command-line tool.
//!
//! Every experiment reads a [`RunConfig`]. Defaults depend on the experiment,
//! a TOML file may override any of them, and command-line flags override the
//! file. The merged result is stored verbatim in the run manifest.

pub mod bench;
pub mod mpdist;
pub mod report;
pub mod single_neuron;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::network::train::{LrSchedule, TrainConfig};
use crate::network::{Method, WeightInit};

pub use bench::{run_bench, BenchConfig, BenchRun};
pub use mpdist::{run_mpdist_eval, DistanceRankCdf, MpDistRun, TransferMatrix, TransitionRecord};
pub use report::{report, Report};
pub use single_neuron::{run_single_neuron, SingleNeuronConfig, SingleNeuronRun};
pub use train::{run_train, DataConfig, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SingleNeuron,
    MpdistEval,
    Bench,
    Train,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::SingleNeuron => "single-neuron",
            Experiment::MpdistEval => "mpdist-eval",
            Experiment::Bench => "bench",
            Experiment::Train => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Network in `15C5-P2-300` notation, input size first.
    pub architecture: String,
    pub single_neuron: SingleNeuronConfig,
    pub bench: BenchConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::defaults(Experiment::Train)
    }
}

/// Values given on the command line; `None` keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub steps: Option<usize>,
    pub rounds: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub mnist_dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = Self {
            train: TrainConfig::default(),
            architecture: "784-400-10".into(),
            single_neuron: SingleNeuronConfig::default(),
            bench: BenchConfig::default(),
            data: DataConfig::default(),
        };
        match experiment {
            Experiment::SingleNeuron | Experiment::MpdistEval => {
                cfg.train.n_steps = 30;
                cfg.train.batch_size = 1;
                cfg.train.learning_rate = single_neuron::DEFAULT_LEARNING_RATE;
                cfg.train.dense_init = WeightInit::UniformFanIn;
                cfg.architecture = "200-1".into();
                if experiment == Experiment::MpdistEval {
                    // small steps, so spike-train changes stay local as in ordinary training
                    cfg.train.learning_rate = TrainConfig::default().learning_rate;
                    cfg.single_neuron.rounds = 100;
                    cfg.train.record_snapshots = true;
                }
            }
            Experiment::Bench => {
                cfg.architecture = cfg.bench.architecture.clone();
                cfg.train.batch_size = cfg.bench.batch_size;
            }
            Experiment::Train => {
                cfg.train.batch_size = 64;
                cfg.train.epochs = 20;
                cfg.train.learning_rate = 0.002;
                cfg.train.lr_schedule = LrSchedule::Cosine;
                cfg.train.weight_decay = 1.0;
            }
        }
        cfg
    }

    /// Experiment defaults, overlaid with the TOML file at `path` when given.
    pub fn load(experiment: Experiment, path: Option<&Path>) -> Result<Self> {
        let base = Self::defaults(experiment);
        let Some(path) = path else {
            return Ok(base);
        };
        let text = fs::read_to_string(path).map_err(|source| SnnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_over(base, &text).map_err(|reason| SnnError::Parse {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_toml_over(base: Self, text: &str) -> std::result::Result<Self, String> {
        let file: serde_json::Value = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut merged = serde_json::to_value(&base).map_err(|e| e.to_string())?;
        merge_json(&mut merged, file);
        serde_json::from_value(merged).map_err(|e| e.to_string())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.method {
            self.train.method = v;
        }
        if let Some(v) = o.steps {
            self.train.n_steps = v;
            self.bench.steps = vec![v];
        }
        if let Some(v) = o.rounds {
            self.single_neuron.rounds = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
            self.bench.batch_size = v;
        }
        if let Some(v) = &o.mnist_dir {
            self.data.mnist_dir = Some(v.clone());
        }
        for (src, dst) in [
            (&o.train_images, &mut self.data.train_images),
            (&o.train_labels, &mut self.data.train_labels),
            (&o.test_images, &mut self.data.test_images),
            (&o.test_labels, &mut self.data.test_labels),
        ] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Independent generator for `stream` derived from the master seed.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
