use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SnnError};
use crate::lif::{convolve_spikes, Psc, SpikeTrain};
use crate::na::output_g;

/// Van Rossum loss `sum_i sum_t 1/2 ((kernel * d_i)[t] - a_i[t])^2` and the per-neuron `g`.
pub fn van_rossum_loss(a_out: &[Psc], targets: &[SpikeTrain], kernel: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_len("van_rossum_loss neurons", a_out.len(), targets.len())?;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(a_out.len());
    for (a, d) in a_out.iter().zip(targets) {
        check_len("van_rossum_loss steps", kernel.len(), a.len())?;
        let desired = convolve_spikes(d, kernel)?;
        loss += a
            .values()
            .iter()
            .zip(&desired)
            .map(|(x, y)| 0.5 * (y - x) * (y - x))
            .sum::<f64>();
        g.push(output_g(a, d, kernel)?);
    }
    Ok((loss, g))
}

/// Maps class labels to desired output spike trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetEncoding {
    /// The labelled neuron should fire at every step, all others stay silent.
    #[default]
    Dense,
    /// The labelled neuron should fire every `period` steps starting at the first.
    Periodic { period: usize },
}

impl TargetEncoding {
    pub fn encode(&self, label: usize, n_classes: usize, n_steps: usize) -> Result<Vec<SpikeTrain>> {
        if label >= n_classes {
            return Err(SnnError::InvalidConfig(format!("label {label} outside {n_classes} classes")));
        }
        let active = match *self {
            TargetEncoding::Dense => SpikeTrain::new(vec![true; n_steps]),
            TargetEncoding::Periodic { period } => {
                if period == 0 {
                    return Err(SnnError::InvalidConfig("target period must be >= 1".into()));
                }
                SpikeTrain::new((0..n_steps).map(|t| t % period == 0).collect())
            }
        };
        Ok((0..n_classes)
            .map(|c| if c == label { active.clone() } else { SpikeTrain::silent(n_steps) })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Largest summed output PSC.
    #[default]
    SummedPsc,
    /// Most output spikes.
    SpikeCount,
}

/// Argmax of the summed output PSC; ties go to the lowest class index.
pub fn classify(outputs: &[Psc]) -> usize {
    argmax_first(outputs.iter().map(|a| a.values().iter().sum::<f64>()))
}

pub fn classify_with(rule: DecisionRule, outputs: &[Psc], spikes: &[SpikeTrain]) -> usize {
    match rule {
        DecisionRule::SummedPsc => classify(outputs),
        DecisionRule::SpikeCount => argmax_first(spikes.iter().map(|s| s.count() as f64)),
    }
}

fn argmax_first(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}
