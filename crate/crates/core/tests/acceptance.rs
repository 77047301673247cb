//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line on
//! stderr; the test fails if any criterion fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use na_snn::harness::{run_bench, run_mpdist_eval, run_single_neuron, run_train, Experiment, RunConfig};
use na_snn::lif::{lif_forward, psc_kernel, NeuronParams, Psc, SpikeTrain};
use na_snn::mp::{mp_add, mp_dist, mp_sub, sns_closed_form_dist, sns_neighborhood, Perturbation, FLIP_MARGIN};
use na_snn::na::{
    aggregate_general, aggregate_sns, aggregated_gradient_into, neighbor_finite_difference, output_g, psc_error, ClipBound,
    NaConfig,
};
use na_snn::network::Method;
use na_snn::surrogate::{surrogate_delta_into, SurrogateParams};

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn say(o: &Outcome) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {}: {status}  {}", o.id, o.detail);
}

fn info(msg: &str) {
    let _ = writeln!(std::io::stderr(), "    {msg}");
}

fn params(n: usize) -> NeuronParams {
    NeuronParams::new(5.0, 2.0, 1.0, n).unwrap()
}

fn random_currents(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.6)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn algebra_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut round_trip, mut inverse, mut antisym) = (0.0f64, 0.0f64, 0.0f64);
    let mut identity_ok = true;
    let mut antisym_pairs = 0;
    for i in 0..10_000 {
        let n = [5, 10, 30][i % 3];
        let p = params(n);
        let c = random_currents(&mut rng, n);
        let tr = lif_forward(&c, &p).unwrap();
        let eps = Perturbation((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let moved = mp_add(&tr, &eps, &p).unwrap();
        round_trip = round_trip.max(max_abs_diff(mp_sub(&moved, &tr, &p).unwrap().values(), eps.values()));
        let back = mp_add(&tr, &mp_sub(&moved, &tr, &p).unwrap(), &p).unwrap();
        inverse = inverse.max(max_abs_diff(&back.u, &moved.u));
        identity_ok &= mp_add(&tr, &Perturbation::zeros(n), &p).unwrap() == tr;
        let near = |u: &[f64]| u.iter().any(|x| (x - p.theta()).abs() < 10.0 * FLIP_MARGIN);
        if !near(&tr.u) && !near(&moved.u) {
            let fwd = mp_sub(&moved, &tr, &p).unwrap();
            let rev: Vec<f64> = mp_sub(&tr, &moved, &p).unwrap().values().iter().map(|x| -x).collect();
            antisym = antisym.max(max_abs_diff(fwd.values(), &rev));
            antisym_pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = round_trip <= 1e-9 && inverse <= 1e-9 && antisym <= 1e-9 && identity_ok && secs < 60.0;
    Outcome {
        id: 1,
        pass,
        detail: format!(
            "round-trip {round_trip:.2e}, re-add {inverse:.2e}, antisymmetry {antisym:.2e} over {antisym_pairs} pairs, identity exact {identity_ok}, {secs:.1} s"
        ),
    }
}

fn sns_closed_form() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut dist_err, mut off_pos) = (0.0f64, 0.0f64);
    for i in 0..1_000 {
        let n = [5, 10, 30][i % 3];
        let p = params(n);
        let tr = lif_forward(&random_currents(&mut rng, n), &p).unwrap();
        for m in sns_neighborhood(&tr, &p).unwrap().members {
            let closed = sns_closed_form_dist(&tr, m.index, &p).abs();
            dist_err = dist_err.max((closed - mp_dist(&m.trace, &tr, &p).unwrap()).abs());
            let diff = mp_sub(&m.trace, &tr, &p).unwrap();
            for (t, v) in diff.values().iter().enumerate() {
                if t != m.index {
                    off_pos = off_pos.max(v.abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 2,
        pass: dist_err <= FLIP_MARGIN + 1e-9 && off_pos <= 1e-9 && secs < 60.0,
        detail: format!("max |closed form - mp_dist| {dist_err:.2e}, max off-position {off_pos:.2e}, {secs:.1} s"),
    }
}

fn aggregation_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let bound = ClipBound::default();
    let mut worst = 0.0f64;
    let mut clipped = 0usize;
    for i in 0..1_000 {
        let n = [5, 10, 30][i % 3];
        let p = params(n);
        let tr = lif_forward(&random_currents(&mut rng, n), &p).unwrap();
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hood = sns_neighborhood(&tr, &p).unwrap();
        let mut signed = Vec::with_capacity(n);
        let mut magnitudes = Vec::with_capacity(n);
        let mut dirs = Vec::with_capacity(n);
        for m in &hood.members {
            signed.push(neighbor_finite_difference(&e, &tr.a, &m.trace.a, m.signed_dist, bound));
            magnitudes.push(neighbor_finite_difference(&e, &tr.a, &m.trace.a, m.signed_dist.abs(), bound));
            dirs.push(m.unit_dir.clone());
            if m.signed_dist.abs().powi(3) < 1.0 / bound.value() {
                clipped += 1;
            }
        }
        let general = aggregate_general(&dirs, &magnitudes).unwrap();
        worst = worst.max(max_abs_diff(&general, &aggregate_sns(&signed)));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 3,
        pass: worst <= 1e-8 && clipped > 0 && secs < 60.0,
        detail: format!("max elementwise difference {worst:.2e}, {clipped} clipped neighbors, {secs:.1} s"),
    }
}

/// `L = sum_t ½(a[t] - (kernel * d)[t])²`, where raising `a[t]` by `h` also
/// raises every later `a[t']` by `h·decay^(t'-t)` through the PSC recursion.
fn loss_with_bump(a: &[f64], desired: &[f64], t0: usize, h: f64, decay: f64) -> f64 {
    let mut bump = 0.0;
    a.iter()
        .zip(desired)
        .enumerate()
        .map(|(t, (x, y))| {
            if t == t0 {
                bump = h;
            } else if t > t0 {
                bump *= decay;
            }
            0.5 * (x + bump - y).powi(2)
        })
        .sum()
}

fn output_gradient_check() -> Outcome {
    let start = Instant::now();
    let n = 10;
    let p = params(n);
    let kernel = psc_kernel(&p);
    let decay = p.synaptic_decay();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.2)).collect();
        let d = SpikeTrain::new((0..n).map(|_| rng.random_bool(0.3)).collect());
        let mut desired = vec![0.0; n];
        let mut acc = 0.0;
        for (t, x) in desired.iter_mut().enumerate() {
            acc = decay * acc + if d.get(t) { 1.0 / p.tau_s() } else { 0.0 };
            *x = acc;
        }
        let e = psc_error(&output_g(&Psc::new(a.clone()), &d, &kernel).unwrap(), &p);
        for t in 0..n {
            let fd = (loss_with_bump(&a, &desired, t, h, decay) - loss_with_bump(&a, &desired, t, -h, decay)) / (2.0 * h);
            let rel = (fd - e[t]).abs() / e[t].abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 4,
        pass: worst < 1e-4 && secs < 60.0,
        detail: format!("max relative error {worst:.2e}, {secs:.1} s"),
    }
}

/// Outputs of criteria 5-8 that criterion 9 compares.
struct Runs {
    outcomes: Vec<Outcome>,
}

fn single_neuron_cfg(method: Method) -> RunConfig {
    let mut cfg = RunConfig::defaults(Experiment::SingleNeuron);
    cfg.single_neuron.rounds = 100;
    cfg.train.method = method;
    cfg
}

fn single_neuron_study(out: &Path) -> Outcome {
    let start = Instant::now();
    let na = run_single_neuron(&single_neuron_cfg(Method::Na)).unwrap();
    let sg = run_single_neuron(&single_neuron_cfg(Method::Surrogate)).unwrap();
    na.write(&out.join("single-neuron-na")).unwrap();
    sg.write(&out.join("single-neuron-surrogate")).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (frac, med_na, med_sg) = (na.converged_fraction(), na.median_convergence(), sg.median_convergence());
    Outcome {
        id: 5,
        pass: frac >= 0.9 && med_na < med_sg && secs < 1200.0,
        detail: format!(
            "NA converged {:.0}% (median {med_na}), surrogate converged {:.0}% (median {med_sg}), {secs:.1} s",
            100.0 * frac,
            100.0 * sg.converged_fraction()
        ),
    }
}

fn mpdist_quality(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::defaults(Experiment::MpdistEval);
    let run = run_mpdist_eval(&cfg).unwrap();
    run.write(&out.join("mpdist-eval")).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let top1 = run.cdf.top1_fraction();
    let last = run.cdf.cumulative.last().copied().unwrap_or(0.0);
    Outcome {
        id: 6,
        pass: top1 >= 0.5 && (last - 1.0).abs() < 1e-12 && run.cdf.total() > 0 && secs < 600.0,
        detail: format!(
            "rank-1 fraction {top1:.3} over {} changed transitions, CDF ends at {last}, lr {}, {secs:.1} s",
            run.cdf.total(),
            cfg.train.learning_rate
        ),
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("NA_SNN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_desk_scale(out: &Path) -> Outcome {
    let start = Instant::now();
    let mut cfg = RunConfig::defaults(Experiment::Train);
    cfg.data.mnist_dir = Some(mnist_dir());
    let run = match run_train(&cfg) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                id: 7,
                pass: false,
                detail: format!("could not train: {e}"),
            }
        }
    };
    run.write(&out.join("train")).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let acc = run.final_accuracy();
    Outcome {
        id: 7,
        pass: cfg.architecture == "784-400-10"
            && cfg.train.n_steps == 5
            && cfg.train.epochs <= 20
            && run.n_train == 5000
            && run.n_test == 1000
            && acc >= 0.95
            && secs < 1800.0,
        detail: format!(
            "final test accuracy {:.2}% after {} epochs (best {:.2}%), {secs:.1} s",
            100.0 * acc,
            cfg.train.epochs,
            100.0 * run.best_accuracy()
        ),
    }
}

fn complexity_scaling(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::defaults(Experiment::Bench);
    let run = run_bench(&cfg).unwrap();
    run.write(&out.join("bench")).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let na = run.backward_ratio(Method::Na, 5, 20).unwrap();
    let sg = run.backward_ratio(Method::Surrogate, 5, 20).unwrap();
    let mut fwd_gap = 0.0f64;
    for &n in &cfg.bench.steps {
        let a = run.row(Method::Na, n).unwrap().forward_s;
        let b = run.row(Method::Surrogate, n).unwrap().forward_s;
        fwd_gap = fwd_gap.max((a - b).abs() / b);
    }
    Outcome {
        id: 8,
        pass: na >= 2.0 * sg && fwd_gap <= 0.2 && secs < 600.0,
        detail: format!(
            "backward T(20)/T(5): NA {na:.2}, surrogate {sg:.2} (need NA >= {:.2}); forward gap {:.1}%, {secs:.1} s",
            2.0 * sg,
            100.0 * fwd_gap
        ),
    }
}

/// Per-neuron backward kernels alone, without the matrix products both methods share.
fn kernel_scaling() -> String {
    let mut per_neuron = Vec::new();
    for n in [5, 20] {
        let p = params(n);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let traces: Vec<_> = (0..2000).map(|_| lif_forward(&random_currents(&mut rng, n), &p).unwrap()).collect();
        let errors: Vec<Vec<f64>> = (0..2000)
            .map(|_| psc_error(&(0..n).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<_>>(), &p))
            .collect();
        let mut out = vec![0.0; n];
        let mut sink = 0.0;
        let (na, sg) = (NaConfig::default(), SurrogateParams::default());
        let t = Instant::now();
        for _ in 0..20 {
            for (tr, e) in traces.iter().zip(&errors) {
                aggregated_gradient_into(tr, e, &p, &na, &mut out).unwrap();
                sink += out[0];
            }
        }
        let t_na = t.elapsed().as_secs_f64();
        let t = Instant::now();
        for _ in 0..20 {
            for (tr, e) in traces.iter().zip(&errors) {
                surrogate_delta_into(tr, e, &p, &sg, &mut out);
                sink += out[0];
            }
        }
        let t_sg = t.elapsed().as_secs_f64();
        assert!(sink.is_finite());
        per_neuron.push((t_na, t_sg));
    }
    format!(
        "per-neuron backward kernels T(20)/T(5): NA {:.2}, surrogate {:.2}",
        per_neuron[1].0 / per_neuron[0].0,
        per_neuron[1].1 / per_neuron[0].1
    )
}

fn run_five_to_eight(out: &Path) -> Runs {
    let outcomes = vec![
        single_neuron_study(out),
        mpdist_quality(out),
        mnist_desk_scale(out),
        complexity_scaling(out),
    ];
    Runs { outcomes }
}

/// Every CSV except wall-clock timings, relative path first.
fn metrics_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") && path.file_name().is_some_and(|n| n != "timings.csv") {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let a = metrics_files(first);
    let b = metrics_files(second);
    let names: Vec<_> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let pass = !a.is_empty() && a.len() == b.len() && differing.is_empty();
    Outcome {
        id: 9,
        pass,
        detail: if pass {
            format!("{} metrics tables byte-identical across two runs", names.len())
        } else {
            format!("{} vs {} tables, differing: {differing:?}", a.len(), b.len())
        },
    }
}

#[test]
fn acceptance_criteria() {
    let mut all = Vec::new();
    for check in [algebra_suite, sns_closed_form, aggregation_equivalence, output_gradient_check] {
        let o = check();
        say(&o);
        all.push(o);
    }

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let runs = run_five_to_eight(first.path());
    for o in &runs.outcomes {
        say(o);
    }
    info(&kernel_scaling());
    {
        let mut cfg = RunConfig::defaults(Experiment::MpdistEval);
        cfg.train.learning_rate = 0.003;
        let run = run_mpdist_eval(&cfg).unwrap();
        info(&format!(
            "mpdist at the single-neuron learning rate 0.003: rank-1 fraction {:.3}",
            run.cdf.top1_fraction()
        ));
    }
    all.extend(runs.outcomes);

    let _ = writeln!(std::io::stderr(), "    repeating criteria 5-8 for the determinism check");
    let _ = run_five_to_eight(second.path());
    let o = determinism(first.path(), second.path());
    say(&o);
    all.push(o);

    let failed: Vec<usize> = all.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
