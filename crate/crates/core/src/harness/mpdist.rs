//! How far neurons move in membrane-potential space across one weight update.
//!
//! Every recorded transition `s_before -> s_after` is scored by its MP-dist and
//! ranked against the other regions reachable by a single flip of the
//! before-update waveform. The single-flip neighbor `p` lies at distance
//! `|theta - u[p]|`. The destination region's distance is the smaller of the
//! observed `d_MP(u_after, u_before)` and, when the destination is itself a
//! single-flip region, that region's flip distance. Its rank is one plus the
//! number of other single-flip regions that are strictly closer, so rank 1
//! means no alternative region was nearer than the one the neuron moved to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::single_neuron::{run_single_neuron, SingleNeuronRun};
use super::RunConfig;
use crate::data::manifest::fmt_f64;
use crate::data::{write_metrics, MetricsTable, RunManifest};
use crate::error::{Result, SnnError};
use crate::lif::NeuronParams;
use crate::mp::{mp_sub_waveform, sns_neighborhood, spike_train_index};
use crate::network::train::Snapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub round: usize,
    pub iteration: usize,
    pub layer: usize,
    pub neuron: usize,
    pub from: u64,
    pub to: u64,
    pub d_mp: f64,
    /// Distance rank among single-flip regions; `None` when the spike train did not change.
    pub rank: Option<usize>,
}

impl TransitionRecord {
    pub fn changed(&self) -> bool {
        self.from != self.to
    }
}

pub fn classify_transition(round: usize, snap: &Snapshot, params: &NeuronParams) -> Result<TransitionRecord> {
    let from = spike_train_index(&snap.before.s)?;
    let to = spike_train_index(&snap.after)?;
    let d_mp = mp_sub_waveform(&snap.after_u, &snap.before, params)?.norm();
    let rank = if from == to {
        None
    } else {
        Some(destination_rank(snap, to, d_mp, params)?)
    };
    Ok(TransitionRecord {
        round,
        iteration: snap.iteration,
        layer: snap.layer,
        neuron: snap.neuron,
        from,
        to,
        d_mp,
        rank,
    })
}

fn destination_rank(snap: &Snapshot, to: u64, d_mp: f64, params: &NeuronParams) -> Result<usize> {
    // nearest flip distance per distinct single-flip region
    let mut regions: BTreeMap<u64, f64> = BTreeMap::new();
    for m in sns_neighborhood(&snap.before, params)?.members {
        let idx = spike_train_index(&m.trace.s)?;
        let d = m.signed_dist.abs();
        regions.entry(idx).and_modify(|v| *v = v.min(d)).or_insert(d);
    }
    let dest = regions.get(&to).map_or(d_mp, |&d| d.min(d_mp));
    let closer = regions.iter().filter(|(&idx, &d)| idx != to && d < dest).count();
    Ok(1 + closer)
}

/// Sparse transition counts indexed by spike-train decimal codes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferMatrix {
    pub counts: BTreeMap<(u64, u64), u64>,
    pub diagonal_zeroed: bool,
}

impl TransferMatrix {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TransitionRecord>) -> Self {
        let mut counts = BTreeMap::new();
        for r in records {
            *counts.entry((r.from, r.to)).or_insert(0) += 1;
        }
        Self {
            counts,
            diagonal_zeroed: false,
        }
    }

    pub fn zero_diagonal(&mut self) {
        self.counts.retain(|(i, j), _| i != j);
        self.diagonal_zeroed = true;
    }

    pub fn get(&self, from: u64, to: u64) -> u64 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["from", "to", "count"]);
        for (&(i, j), &c) in &self.counts {
            t.push(vec![i.to_string(), j.to_string(), c.to_string()])?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceRankCdf {
    /// Number of transitions at rank `r + 1`.
    pub counts: Vec<usize>,
    /// Fraction of transitions with rank `<= r + 1`.
    pub cumulative: Vec<f64>,
    /// MP-dist of every changed transition, ascending.
    pub distances: Vec<f64>,
}

impl DistanceRankCdf {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TransitionRecord>) -> Self {
        let mut counts: Vec<usize> = Vec::new();
        let mut distances = Vec::new();
        for r in records {
            let Some(rank) = r.rank else { continue };
            if counts.len() < rank {
                counts.resize(rank, 0);
            }
            counts[rank - 1] += 1;
            distances.push(r.d_mp);
        }
        distances.sort_by(f64::total_cmp);
        let total: usize = counts.iter().sum();
        let mut acc = 0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += c;
                if acc == total {
                    1.0
                } else {
                    acc as f64 / total as f64
                }
            })
            .collect();
        Self {
            counts,
            cumulative,
            distances,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn top1_fraction(&self) -> f64 {
        self.cumulative.first().copied().unwrap_or(0.0)
    }

    pub fn table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["rank", "count", "cumulative_fraction"]);
        for (i, (c, f)) in self.counts.iter().zip(&self.cumulative).enumerate() {
            t.push(vec![(i + 1).to_string(), c.to_string(), fmt_f64(*f)])?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpDistRun {
    pub training: SingleNeuronRun,
    pub matrix: TransferMatrix,
    pub cdf: DistanceRankCdf,
}

/// Trains single neurons with snapshot recording and scores every spike-train change.
pub fn run_mpdist_eval(cfg: &RunConfig) -> Result<MpDistRun> {
    if !cfg.train.record_snapshots {
        return Err(SnnError::MissingSnapshots("enable record_snapshots for this experiment".into()));
    }
    let training = run_single_neuron(cfg)?;
    mpdist_from_run(training)
}

pub fn mpdist_from_run(training: SingleNeuronRun) -> Result<MpDistRun> {
    if training.transitions().next().is_none() && training.iterations() > 0 && !training.rounds.is_empty() {
        return Err(SnnError::MissingSnapshots("training produced no before/after records".into()));
    }
    let mut matrix = TransferMatrix::from_records(training.transitions());
    matrix.zero_diagonal();
    let cdf = DistanceRankCdf::from_records(training.transitions());
    Ok(MpDistRun { training, matrix, cdf })
}

impl MpDistRun {
    pub fn transitions_table(&self) -> Result<MetricsTable> {
        let mut t = MetricsTable::new(&["round", "iteration", "neuron", "from", "to", "d_mp", "rank"]);
        for r in self.training.transitions().filter(|r| r.changed()) {
            t.push(vec![
                r.round.to_string(),
                r.iteration.to_string(),
                r.neuron.to_string(),
                r.from.to_string(),
                r.to.to_string(),
                fmt_f64(r.d_mp),
                r.rank.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
        Ok(t)
    }

    pub fn manifest(&self) -> RunManifest {
        let cfg = &self.training.config;
        let mut m = RunManifest::new("mpdist-eval", cfg.train.seed, cfg.to_json());
        m.summary = serde_json::json!({
            "method": cfg.train.method.as_str(),
            "changed_transitions": self.cdf.total(),
            "unchanged_transitions": self.training.transitions().filter(|r| !r.changed()).count(),
            "top1_fraction": self.cdf.top1_fraction(),
            "max_rank": self.cdf.counts.len(),
        });
        m
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_metrics(
            dir,
            &self.manifest(),
            &[
                ("transfers.csv", &self.matrix.table()?),
                ("distance_rank_cdf.csv", &self.cdf.table()?),
                ("transitions.csv", &self.transitions_table()?),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::{lif_forward, SpikeTrain};

    fn record(from: u64, to: u64, rank: Option<usize>, d: f64) -> TransitionRecord {
        TransitionRecord {
            round: 0,
            iteration: 0,
            layer: 0,
            neuron: 0,
            from,
            to,
            d_mp: d,
            rank,
        }
    }

    #[test]
    fn matrix_cell_for_index_pair() {
        let before = SpikeTrain::from_binary(&[0, 0, 0, 0, 0, 0, 0, 1, 0, 0]).unwrap();
        let after = SpikeTrain::from_binary(&[0, 0, 0, 0, 0, 0, 0, 1, 0, 1]).unwrap();
        let r = record(spike_train_index(&before).unwrap(), spike_train_index(&after).unwrap(), Some(1), 0.1);
        let same = record(4, 4, None, 0.0);
        let mut m = TransferMatrix::from_records([&r, &r, &same]);
        assert_eq!(m.get(4, 5), 2);
        assert_eq!(m.get(4, 4), 1);
        m.zero_diagonal();
        assert_eq!(m.get(4, 4), 0);
        assert_eq!(m.total(), 2);
    }

    #[test]
    fn unchanged_only_gives_empty_matrix() {
        let recs = [record(3, 3, None, 0.0), record(9, 9, None, 0.0)];
        let mut m = TransferMatrix::from_records(&recs);
        m.zero_diagonal();
        assert!(m.counts.is_empty());
        assert!(DistanceRankCdf::from_records(&recs).cumulative.is_empty());
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let recs = [record(0, 1, Some(1), 0.3), record(0, 2, Some(3), 0.1), record(1, 0, Some(1), 0.2)];
        let cdf = DistanceRankCdf::from_records(&recs);
        assert_eq!(cdf.counts, vec![2, 0, 1]);
        assert!(cdf.cumulative.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*cdf.cumulative.last().unwrap(), 1.0);
        assert_eq!(cdf.distances, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn nearest_flip_ranks_first() {
        let p = NeuronParams::new(5.0, 2.0, 1.0, 4).unwrap();
        let before = lif_forward(&[0.1, 0.85, 0.0, 0.0], &p).unwrap();
        // step 1 is closest to threshold; push it over
        let after = lif_forward(&[0.1, 0.95, 0.0, 0.0], &p).unwrap();
        let snap = Snapshot {
            iteration: 0,
            sample: 0,
            layer: 0,
            neuron: 0,
            before: before.clone(),
            after: after.s.clone(),
            after_u: after.u.clone(),
        };
        let r = classify_transition(0, &snap, &p).unwrap();
        assert!(r.changed());
        assert_eq!(r.rank, Some(1));
        // a far flip at step 0 ranks behind the nearer candidates
        let far = lif_forward(&[1.0, 0.85, 0.0, 0.0], &p).unwrap();
        let snap = Snapshot {
            after: far.s.clone(),
            after_u: far.u.clone(),
            ..snap
        };
        assert_eq!(classify_transition(0, &snap, &p).unwrap().rank, Some(4));
    }
}
