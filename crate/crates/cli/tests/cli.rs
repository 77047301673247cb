use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use na_snn::data::idx::{encode_idx_images, encode_idx_labels, IMAGE_PIXELS};

fn na_snn(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_na-snn")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn flags_override_config_file_and_land_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 5\nlearning_rate = 0.01\n[single_neuron]\nrounds = 7\niterations = 10\n").unwrap();
    let out = tmp.path().join("sn");
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out.to_str().unwrap();
    na_snn(&["single-neuron", "--config", cfg_s, "--seed", "9", "--rounds", "2", "--method", "surrogate", "--out", out_s]);
    let m = manifest(&out);
    assert_eq!(m["experiment"], "single-neuron");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["learning_rate"], 0.01);
    assert_eq!(m["config"]["method"], "surrogate");
    assert_eq!(m["config"]["single_neuron"]["rounds"], 2);
    assert_eq!(m["config"]["single_neuron"]["iterations"], 10);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("schema_version,1\n"));

    let report = na_snn(&["report", out_s]);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("rounds: 2"), "{text}");
    assert!(out.join("report").join("loss_curve.csv").exists());
}

#[test]
fn mpdist_and_bench_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mp = tmp.path().join("mp");
    na_snn(&["mpdist-eval", "--rounds", "2", "--out", mp.to_str().unwrap()]);
    for t in ["transfers.csv", "distance_rank_cdf.csv", "transitions.csv"] {
        assert!(mp.join(t).exists(), "missing {t}");
    }

    let cfg = tmp.path().join("bench.toml");
    fs::write(&cfg, "[bench]\narchitecture = \"8-6-3\"\nsteps = [3, 6]\nbatch_size = 4\nrepetitions = 3\nwarmup = 0\n").unwrap();
    let b = tmp.path().join("bench");
    let out = na_snn(&["bench", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("na ")).count(), 2);
    assert!(b.join("metrics.csv").exists() && b.join("timings.csv").exists());
    assert_eq!(manifest(&b)["config"]["bench"]["steps"], serde_json::json!([3, 6]));
}

#[test]
fn train_reads_explicit_idx_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs: Vec<Vec<u8>> = (0..8).map(|i| vec![(i * 30) as u8; IMAGE_PIXELS]).collect();
    let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
    let p = |n: &str| tmp.path().join(n);
    fs::write(p("ti"), encode_idx_images(&imgs)).unwrap();
    fs::write(p("tl"), encode_idx_labels(&labels)).unwrap();
    let cfg = p("train.toml");
    fs::write(&cfg, "architecture = \"784-4-10\"\n").unwrap();
    let out = p("train");
    na_snn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--train-images",
        p("ti").to_str().unwrap(),
        "--train-labels",
        p("tl").to_str().unwrap(),
        "--test-images",
        p("ti").to_str().unwrap(),
        "--test-labels",
        p("tl").to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--steps",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    let m = manifest(&out);
    assert_eq!(m["config"]["epochs"], 1);
    assert_eq!(m["config"]["batch_size"], 4);
    assert_eq!(m["config"]["n_steps"], 3);
    assert_eq!(m["summary"]["train_samples"], 8);
    assert!(out.join("epochs.csv").exists());
}

#[test]
fn missing_data_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_na-snn"))
        .args(["train", "--mnist-dir", tmp.path().to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
