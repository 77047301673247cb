//! Wall-clock comparison of the two backward engines across window lengths.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{derived_rng, median, RunConfig};
use crate::data::manifest::fmt_f64;
use crate::data::{write_metrics, EncodedSample, MetricsTable, RunManifest, SampleTarget};
use crate::error::{Result, SnnError};
use crate::network::train::{train_step, PhaseTimes, TrainConfig};
use crate::network::{parse_architecture, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub architecture: String,
    pub steps: Vec<usize>,
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub methods: Vec<Method>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            architecture: "16-64-10".into(),
            steps: vec![5, 10, 20],
            batch_size: 32,
            repetitions: 7,
            warmup: 1,
            methods: vec![Method::Na, Method::Surrogate],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSample {
    pub method: Method,
    pub n_steps: usize,
    pub repetition: usize,
    pub loss: f64,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n_steps: usize,
    pub forward_s: f64,
    pub backward_s: f64,
    pub optimizer_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub config: RunConfig,
    pub samples: Vec<BenchSample>,
}

fn bench_batch(cfg: &RunConfig, n_inputs: usize, n_classes: usize, n_steps: usize) -> Vec<EncodedSample> {
    let mut rng = derived_rng(cfg.train.seed, 1_000_000 + n_steps as u64);
    (0..cfg.bench.batch_size)
        .map(|_| {
            let levels: Vec<f64> = (0..n_inputs).map(|_| rng.random::<f64>()).collect();
            EncodedSample {
                currents: levels.iter().flat_map(|&v| std::iter::repeat_n(v, n_steps)).collect(),
                target: SampleTarget::Label(rng.random_range(0..n_classes)),
            }
        })
        .collect()
}

/// Times forward, backward and optimizer phases of one training step per method and window.
///
/// Each timed step starts from the same initial model and batch. Repetitions
/// alternate between methods so slow drifts in machine load hit both alike.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchRun> {
    let bc = &cfg.bench;
    if bc.repetitions < 3 {
        return Err(SnnError::InvalidConfig("bench needs at least 3 repetitions".into()));
    }
    let specs = parse_architecture(&bc.architecture)?;
    let n_inputs = specs[0].input_shape().size();
    let n_classes = specs.last().map_or(0, |s| s.output_shape().size());
    let mut samples = Vec::new();
    for &n_steps in &bc.steps {
        let train = TrainConfig {
            n_steps,
            batch_size: bc.batch_size,
            ..cfg.train.clone()
        };
        train.validate()?;
        let mut rng = derived_rng(cfg.train.seed, n_steps as u64);
        let initial = train.build_model(&specs, &mut rng)?;
        let data = bench_batch(cfg, n_inputs, n_classes, n_steps);
        let batch: Vec<&EncodedSample> = data.iter().collect();
        for rep in 0..bc.warmup + bc.repetitions {
            for &method in &bc.methods {
                let mut model = initial.clone();
                let tc = TrainConfig { method, ..train.clone() };
                let step = train_step(&mut model, &batch, &tc, 0)?;
                if rep >= bc.warmup {
                    samples.push(BenchSample {
                        method,
                        n_steps,
                        repetition: rep - bc.warmup,
                        loss: step.loss,
                        times: step.times,
                    });
                }
            }
        }
    }
    Ok(BenchRun {
        config: cfg.clone(),
        samples,
    })
}

impl BenchRun {
    pub fn rows(&self) -> Vec<BenchRow> {
        let mut rows = Vec::new();
        for &n_steps in &self.config.bench.steps {
            for &method in &self.config.bench.methods {
                let s: Vec<&BenchSample> = self
                    .samples
                    .iter()
                    .filter(|s| s.method == method && s.n_steps == n_steps)
                    .collect();
                let med = |f: fn(&PhaseTimes) -> f64| median(&s.iter().map(|x| f(&x.times)).collect::<Vec<_>>());
                rows.push(BenchRow {
                    method,
                    n_steps,
                    forward_s: med(|t| t.forward_s),
                    backward_s: med(|t| t.backward_s),
                    optimizer_s: med(|t| t.optimizer_s),
                });
            }
        }
        rows
    }

    pub fn row(&self, method: Method, n_steps: usize) -> Option<BenchRow> {
        self.rows().into_iter().find(|r| r.method == method && r.n_steps == n_steps)
    }

    /// Backward-time growth `T(long) / T(short)` for one method.
    pub fn backward_ratio(&self, method: Method, short: usize, long: usize) -> Option<f64> {
        Some(self.row(method, long)?.backward_s / self.row(method, short)?.backward_s)
    }

    /// Losses are the deterministic part of a benchmark run.
    pub fn metrics_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["method", "n_steps", "repetition", "loss"]);
        for s in &self.samples {
            t.push(vec![
                s.method.as_str().into(),
                s.n_steps.to_string(),
                s.repetition.to_string(),
                fmt_f64(s.loss),
            ])?;
        }
        Ok(t)
    }

    pub fn timings_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["method", "n_steps", "repetition", "forward_s", "backward_s", "optimizer_s"]);
        for s in &self.samples {
            t.push(vec![
                s.method.as_str().into(),
                s.n_steps.to_string(),
                s.repetition.to_string(),
                fmt_f64(s.times.forward_s),
                fmt_f64(s.times.backward_s),
                fmt_f64(s.times.optimizer_s),
            ])?;
        }
        Ok(t)
    }

    pub fn manifest(&self) -> RunManifest {
        let mut m = RunManifest::new("bench", self.config.train.seed, self.config.to_json());
        let rows: Vec<serde_json::Value> = self
            .rows()
            .iter()
            .map(|r| {
                serde_json::json!({
                    "method": r.method.as_str(),
                    "n_steps": r.n_steps,
                    "median_forward_s": r.forward_s,
                    "median_backward_s": r.backward_s,
                    "median_optimizer_s": r.optimizer_s,
                })
            })
            .collect();
        m.summary = serde_json::json!({ "medians": rows });
        m
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_metrics(
            dir,
            &self.manifest(),
            &[("metrics.csv", &self.metrics_table()?), ("timings.csv", &self.timings_table()?)],
        )
    }
}
