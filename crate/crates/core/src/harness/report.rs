//! Summaries and plot-ready tables rebuilt from a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::median;
use crate::data::manifest::fmt_f64;
use crate::data::{read_manifest, MetricsTable, RunManifest};
use crate::error::{Result, SnnError};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub manifest: RunManifest,
    pub summary: String,
    pub tables: Vec<(String, MetricsTable)>,
}

fn table(dir: &Path, name: &str) -> Result<MetricsTable> {
    MetricsTable::read(&dir.join(name))
}

fn column(t: &MetricsTable, name: &str, file: &str) -> Result<Vec<f64>> {
    t.column_f64(name).ok_or_else(|| SnnError::Parse {
        path: file.into(),
        reason: format!("missing or malformed column `{name}`"),
    })
}

/// Reads the manifest at `path` (file or directory) and its tables; trains nothing.
pub fn report(path: &Path) -> Result<Report> {
    let (manifest, dir) = read_manifest(path)?;
    let mut summary = String::new();
    let mut tables = Vec::new();
    let _ = writeln!(summary, "experiment: {}", manifest.experiment);
    let _ = writeln!(summary, "seed: {}", manifest.seed);
    match manifest.experiment.as_str() {
        "single-neuron" => {
            let m = table(&dir, "metrics.csv")?;
            let iters = column(&m, "iteration", "metrics.csv")?;
            let loss = column(&m, "loss", "metrics.csv")?;
            let mut by_iter: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (k, l) in iters.iter().zip(&loss) {
                by_iter.entry(*k as usize).or_default().push(*l);
            }
            let mut curve = MetricsTable::new(&["iteration", "mean_loss", "std_loss"]);
            for (k, v) in &by_iter {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                curve.push(vec![k.to_string(), fmt_f64(mean), fmt_f64(std)])?;
            }
            let rounds = table(&dir, "rounds.csv")?;
            let ci = rounds.column_index("convergence_iteration").unwrap_or(1);
            let conv: Vec<f64> = rounds
                .rows
                .iter()
                .map(|r| r[ci].parse::<f64>().unwrap_or(f64::INFINITY))
                .collect();
            let converged = conv.iter().filter(|c| c.is_finite()).count();
            let _ = writeln!(summary, "rounds: {}", conv.len());
            let _ = writeln!(summary, "converged: {converged}");
            let _ = writeln!(summary, "median convergence iteration: {}", median(&conv));
            if let (Some(first), Some(last)) = (curve.rows.first(), curve.rows.last()) {
                let _ = writeln!(summary, "mean loss: {} -> {}", first[1], last[1]);
            }
            tables.push(("loss_curve.csv".to_string(), curve));
        }
        "mpdist-eval" => {
            let cdf = table(&dir, "distance_rank_cdf.csv")?;
            let transfers = table(&dir, "transfers.csv")?;
            let counts = column(&transfers, "count", "transfers.csv")?;
            let _ = writeln!(summary, "distinct off-diagonal transfers: {}", transfers.rows.len());
            let _ = writeln!(summary, "changed transitions: {}", counts.iter().sum::<f64>());
            if let Some(top) = cdf.rows.first() {
                let _ = writeln!(summary, "rank-1 fraction: {}", top[2]);
            }
            tables.push(("distance_rank_cdf.csv".to_string(), cdf));
            tables.push(("transfers.csv".to_string(), transfers));
        }
        "bench" => {
            let t = table(&dir, "timings.csv")?;
            let method = t.column_index("method").unwrap_or(0);
            let steps = t.column_index("n_steps").unwrap_or(1);
            let fwd = column(&t, "forward_s", "timings.csv")?;
            let bwd = column(&t, "backward_s", "timings.csv")?;
            let opt = column(&t, "optimizer_s", "timings.csv")?;
            let mut groups: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
            for (i, r) in t.rows.iter().enumerate() {
                let n: usize = r[steps].parse().unwrap_or(0);
                groups.entry((n, r[method].clone())).or_default().push(i);
            }
            let mut out = MetricsTable::new(&["method", "n_steps", "median_forward_s", "median_backward_s", "median_optimizer_s"]);
            for ((n, m), idx) in &groups {
                let pick = |v: &[f64]| median(&idx.iter().map(|&i| v[i]).collect::<Vec<_>>());
                out.push(vec![m.clone(), n.to_string(), fmt_f64(pick(&fwd)), fmt_f64(pick(&bwd)), fmt_f64(pick(&opt))])?;
                let _ = writeln!(summary, "{m} N_t={n}: backward median {:.6} s", pick(&bwd));
            }
            tables.push(("bench_summary.csv".to_string(), out));
        }
        "train" => {
            let e = table(&dir, "epochs.csv")?;
            let acc = column(&e, "test_accuracy", "epochs.csv")?;
            let _ = writeln!(summary, "epochs: {}", acc.len().saturating_sub(1));
            if let Some(a) = acc.last() {
                let _ = writeln!(summary, "final test accuracy: {a}");
            }
            tables.push(("epochs.csv".to_string(), e));
        }
        other => {
            return Err(SnnError::Parse {
                path: path.to_path_buf(),
                reason: format!("unknown experiment `{other}`"),
            })
        }
    }
    for flag in &manifest.flags {
        let _ = writeln!(summary, "flag: {flag}");
    }
    Ok(Report {
        manifest,
        summary,
        tables,
    })
}
