//! Classification training on IDX digit files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derived_rng, RunConfig};
use crate::data::manifest::fmt_f64;
use crate::data::{encode_digit, load_mnist_idx, write_metrics, DigitImage, EncodedSample, MetricsTable, RunManifest};
use crate::error::{Result, SnnError};
use crate::network::train::{evaluate, train_epoch, PhaseTimes, TrainConfig};
use crate::network::{format_architecture, parse_architecture, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory holding the four standard IDX files; explicit paths take precedence.
    pub mnist_dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub gain: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: Some(5000),
            test_limit: Some(1000),
            gain: 1.0,
        }
    }
}

impl DataConfig {
    fn resolve(&self, explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.clone());
        }
        match &self.mnist_dir {
            Some(dir) => Ok(dir.join(file)),
            None => Err(SnnError::InvalidConfig(format!(
                "no path for {file}; set mnist_dir or the explicit file path"
            ))),
        }
    }

    pub fn train_paths(&self) -> Result<(PathBuf, PathBuf)> {
        Ok((
            self.resolve(&self.train_images, "train-images-idx3-ubyte")?,
            self.resolve(&self.train_labels, "train-labels-idx1-ubyte")?,
        ))
    }

    pub fn test_paths(&self) -> Result<(PathBuf, PathBuf)> {
        Ok((
            self.resolve(&self.test_images, "t10k-images-idx3-ubyte")?,
            self.resolve(&self.test_labels, "t10k-labels-idx1-ubyte")?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: RunConfig,
    pub model: Model,
    /// `(epoch, iteration, loss)` for every mini-batch.
    pub iterations: Vec<(usize, usize, f64)>,
    pub times: Vec<PhaseTimes>,
    pub epochs: Vec<EpochRecord>,
    pub n_train: usize,
    pub n_test: usize,
}

fn load_split(paths: (PathBuf, PathBuf), limit: Option<usize>) -> Result<Vec<DigitImage>> {
    let mut data = load_mnist_idx(&paths.0, &paths.1)?;
    if let Some(n) = limit {
        data.truncate(n);
    }
    Ok(data)
}

fn encode_all(images: &[DigitImage], cfg: &RunConfig) -> Result<Vec<EncodedSample>> {
    let params = cfg.train.params()?;
    images.par_iter().map(|img| encode_digit(img, &params, cfg.data.gain)).collect()
}

/// Trains on the configured digit files and evaluates on the test split after every epoch.
pub fn run_train(cfg: &RunConfig) -> Result<TrainRun> {
    cfg.train.validate()?;
    let train_images = load_split(cfg.data.train_paths()?, cfg.data.train_limit)?;
    let test_images = load_split(cfg.data.test_paths()?, cfg.data.test_limit)?;
    let train = encode_all(&train_images, cfg)?;
    let test = encode_all(&test_images, cfg)?;
    run_train_on(cfg, &train, &test)
}

/// Training loop over already encoded samples.
pub fn run_train_on(cfg: &RunConfig, train: &[EncodedSample], test: &[EncodedSample]) -> Result<TrainRun> {
    cfg.train.validate()?;
    let mut init_rng = derived_rng(cfg.train.seed, 0);
    let mut shuffle_rng = derived_rng(cfg.train.seed, 1);
    let mut model = cfg.train.build_model(&parse_architecture(&cfg.architecture)?, &mut init_rng)?;
    let mut iterations = Vec::new();
    let mut times = Vec::new();
    let mut epochs = Vec::new();
    let rule = cfg.train.decision_rule;
    epochs.push(EpochRecord {
        epoch: 0,
        mean_loss: f64::NAN,
        train_accuracy: f64::NAN,
        test_accuracy: evaluate(&model, test, rule)?,
        seconds: 0.0,
    });
    for epoch in 1..=cfg.train.epochs {
        let start = Instant::now();
        let epoch_cfg = TrainConfig {
            learning_rate: cfg.train.lr_schedule.rate(cfg.train.learning_rate, epoch - 1, cfg.train.epochs),
            ..cfg.train.clone()
        };
        let m = train_epoch(&mut model, train, &epoch_cfg, &mut shuffle_rng)?;
        let test_accuracy = evaluate(&model, test, rule)?;
        iterations.extend(m.losses.iter().enumerate().map(|(i, &l)| (epoch, i, l)));
        times.extend(m.times);
        epochs.push(EpochRecord {
            epoch,
            mean_loss: m.mean_loss,
            train_accuracy: m.accuracy,
            test_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainRun {
        config: cfg.clone(),
        model,
        iterations,
        times,
        epochs,
        n_train: train.len(),
        n_test: test.len(),
    })
}

impl TrainRun {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.test_accuracy)
    }

    pub fn best_accuracy(&self) -> f64 {
        self.epochs.iter().map(|e| e.test_accuracy).fold(f64::NAN, f64::max)
    }

    pub fn metrics_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["epoch", "iteration", "loss"]);
        for &(e, i, l) in &self.iterations {
            t.push(vec![e.to_string(), i.to_string(), fmt_f64(l)])?;
        }
        Ok(t)
    }

    pub fn epochs_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["epoch", "mean_loss", "train_accuracy", "test_accuracy"]);
        for e in &self.epochs {
            t.push(vec![
                e.epoch.to_string(),
                fmt_f64(e.mean_loss),
                fmt_f64(e.train_accuracy),
                fmt_f64(e.test_accuracy),
            ])?;
        }
        Ok(t)
    }

    pub fn timings_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["step", "forward_s", "backward_s", "optimizer_s"]);
        for (i, p) in self.times.iter().enumerate() {
            t.push(vec![i.to_string(), fmt_f64(p.forward_s), fmt_f64(p.backward_s), fmt_f64(p.optimizer_s)])?;
        }
        Ok(t)
    }

    pub fn manifest(&self) -> RunManifest {
        let mut m = RunManifest::new("train", self.config.train.seed, self.config.to_json());
        m.summary = serde_json::json!({
            "method": self.config.train.method.as_str(),
            "architecture": format_architecture(&self.model.specs()),
            "conv_stride": 1,
            "conv_padding": 0,
            "train_samples": self.n_train,
            "test_samples": self.n_test,
            "final_test_accuracy": self.final_accuracy(),
            "epoch_seconds": self.epochs.iter().map(|e| e.seconds).collect::<Vec<_>>(),
        });
        m
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_metrics(
            dir,
            &self.manifest(),
            &[
                ("metrics.csv", &self.metrics_table()?),
                ("epochs.csv", &self.epochs_table()?),
                ("timings.csv", &self.timings_table()?),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::idx::{encode_idx_images, encode_idx_labels, IMAGE_PIXELS};
    use crate::harness::Experiment;

    #[test]
    fn zero_epochs_only_evaluates() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<Vec<u8>> = (0..4).map(|i| vec![(i * 60) as u8; IMAGE_PIXELS]).collect();
        std::fs::write(dir.path().join("train-images-idx3-ubyte"), encode_idx_images(&imgs)).unwrap();
        std::fs::write(dir.path().join("train-labels-idx1-ubyte"), encode_idx_labels(&[0, 1, 2, 3])).unwrap();
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte"), encode_idx_images(&imgs)).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx_labels(&[0, 1, 2, 3])).unwrap();
        let mut cfg = RunConfig::defaults(Experiment::Train);
        cfg.data.mnist_dir = Some(dir.path().to_path_buf());
        cfg.architecture = "784-10".into();
        cfg.train.epochs = 0;
        let run = run_train(&cfg).unwrap();
        assert_eq!(run.epochs.len(), 1);
        assert!(run.iterations.is_empty());
        assert!(run.final_accuracy() >= 0.0);
    }

    #[test]
    fn missing_paths_are_reported() {
        let cfg = RunConfig::defaults(Experiment::Train);
        assert!(matches!(run_train(&cfg), Err(SnnError::InvalidConfig(_))));
    }
}
