//! End-to-end tests of the `xlab` binary: exit codes, artifact layout,
//! idempotence, and the external-classifier protocol (driven through the
//! bundled stub).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const XLAB: &str = env!("CARGO_BIN_EXE_xlab");
const STUB: &str = env!("CARGO_BIN_EXE_xlab-stub-classifier");

fn xlab(args: &[&str]) -> Output {
    Command::new(XLAB)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small, fast synthetic corpus for driving the CLI.
fn simulate(corpus: &Path, seed: u64, n_trials: usize) {
    let out = xlab(&[
        "--seed",
        &seed.to_string(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--set",
        &format!("synth.n_trials={n_trials}"),
        "--set",
        "synth.grid_w=8",
        "--set",
        "synth.grid_h=8",
        "--set",
        "synth.n_drawers=4",
        "simulate",
    ]);
    assert_eq!(code(&out), 0, "simulate failed: {}", stderr(&out));
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn invalid_flag_is_usage_error() {
    let out = xlab(&["--bogus", "run"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn help_exits_zero() {
    let out = xlab(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("simulate"));
}

#[test]
fn bad_override_is_usage_error() {
    let out = xlab(&["--set", "nonsense", "simulate"]);
    assert_eq!(code(&out), 1);
    let out = xlab(&["--set", "exclusion.threshold=0", "simulate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_variant_is_usage_error() {
    let out = xlab(&["predict", "--variant", "bogus"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown variant"));
}

#[test]
fn prior_only_rejects_lambda_and_fit() {
    let out = xlab(&["predict", "--variant", "prior_only", "--lambda", "5"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("drop --lambda"));
    let out = xlab(&["fit", "--variant", "prior_only"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_corpus_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = xlab(&["--corpus", missing.to_str().unwrap(), "aggregate"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("load-corpus"), "{}", stderr(&out));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    let corpus = dir.path().join("corpus");
    std::fs::write(
        &cfg,
        format!(
            "seed = 9\n[paths]\ncorpus = {:?}\n[synth]\nn_trials = 3\ngrid_w = 8\ngrid_h = 8\n",
            corpus.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = xlab(&["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("3 trials"));
    assert!(stdout(&out).contains("seed 9"));

    let out = xlab(&["--config", cfg.to_str().unwrap(), "--seed", "11", "simulate"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("seed 11"), "flag must beat config file");
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    simulate(&a, 7, 4);
    simulate(&b, 7, 4);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    let c = dir.path().join("c");
    simulate(&c, 8, 4);
    assert_ne!(tree_bytes(&a), tree_bytes(&c), "different seeds must differ");
}

#[test]
fn run_writes_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 3, 6);
    let out = xlab(&[
        "--corpus",
        corpus.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--set",
        "bootstrap.n_boot=200",
        "run",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("report written to"));
    for name in [
        "report.md",
        "report.json",
        "aggregate.json",
        "priors.csv",
        "empirical.csv",
        "fit_full.json",
        "loocv_full.json",
        "predictions_full.csv",
        "predictions_prior_only.csv",
        "predictions_l1.csv",
        "predictions_beta.csv",
        "fidelity_by_condition.csv",
        "loocv_mse_by_variant.csv",
        "regression_empirical.csv",
        "regression_model.csv",
    ] {
        assert!(output.join(name).exists(), "missing {name}");
    }
    let predictions = std::fs::read_to_string(output.join("predictions_full.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + 6);
    assert!(predictions.starts_with("trial_id,posterior_truth,fidelity\n"));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 5, 5);
    let args = [
        "--corpus",
        corpus.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--set",
        "bootstrap.n_boot=200",
        "run",
    ];
    let out = xlab(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = tree_bytes(&output);
    let out = xlab(&args);
    assert_eq!(code(&out), 0);
    assert_eq!(tree_bytes(&output), first);
}

#[test]
fn aggregate_and_prior_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 2, 4);
    let base = [
        "--corpus",
        corpus.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ];

    let out = xlab(&[&base[..], &["aggregate"]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(output.join("aggregate.json").exists());
    let consensus: Vec<_> = std::fs::read_dir(output.join("consensus"))
        .unwrap()
        .collect();
    assert_eq!(consensus.len(), 8, "4 trials x 2 classes");

    let out = xlab(&[&base[..], &["prior"]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["priors.csv", "empirical.csv"] {
        let text = std::fs::read_to_string(output.join(name)).unwrap();
        assert!(text.starts_with("trial_id,value,n\n"));
        assert_eq!(text.lines().count(), 1 + 4);
    }
}

#[test]
fn predict_with_fixed_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 4, 4);
    let out = xlab(&[
        "--corpus",
        corpus.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "predict",
        "--variant",
        "full",
        "--lambda",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("lambda = 5"));
    let text = std::fs::read_to_string(output.join("predictions_full.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
}

#[test]
fn teach_builtin_writes_maps_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    simulate(&corpus, 6, 3);
    let args = [
        "--corpus",
        corpus.to_str().unwrap(),
        "--set",
        "gp.n_samples=64",
        "teach",
    ];
    let out = xlab(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("wrote 12 teaching artifacts"));
    for trial in ["t000", "t001", "t002"] {
        for role in ["truth", "foil"] {
            let map = corpus.join(format!("saliency/{trial}.{role}.fgrid"));
            let sidecar = corpus.join(format!("saliency/{trial}.{role}.json"));
            assert!(map.exists());
            let meta: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(&sidecar).unwrap()).unwrap();
            assert_eq!(meta["trial_id"], trial);
            assert_eq!(meta["n_samples"], 64);
            assert!(meta["seed"].is_u64());
            assert!(meta["config_hash"].as_str().unwrap().len() >= 32);
        }
    }

    let first = tree_bytes(&corpus.join("saliency"));
    let out = xlab(&args);
    assert_eq!(code(&out), 0);
    assert_eq!(tree_bytes(&corpus.join("saliency")), first, "teach must be idempotent");
}

fn external_teach(corpus: &Path, output: &Path, stub_args: &str, timeout_secs: u64) -> Output {
    xlab(&[
        "--corpus",
        corpus.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--set",
        "gp.n_samples=16",
        "--set",
        "classifier.kind=external",
        "--set",
        &format!("classifier.command={STUB}"),
        "--set",
        &format!("classifier.args={stub_args}"),
        "--set",
        &format!("classifier.timeout_secs={timeout_secs}"),
        "teach",
    ])
}

#[test]
fn teach_external_stub_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 6, 2);
    let out = external_teach(&corpus, &output, "[\"--probs\", \"0.9,0.1\"]", 10);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("wrote 8 teaching artifacts"));
    // Constant probabilities weight every mask equally, so both classes'
    // expected maps agree up to normalization rounding.
    let truth = xlab::fgrid::read_grid(corpus.join("saliency/t000.truth.fgrid")).unwrap();
    let foil = xlab::fgrid::read_grid(corpus.join("saliency/t000.foil.fgrid")).unwrap();
    for (a, b) in truth.values().iter().zip(foil.values()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn teach_external_timeout_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 6, 2);
    let out = external_teach(&corpus, &output, "[\"--mode\", \"hang\"]", 1);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("failed during teaching"));
    let report = std::fs::read_to_string(output.join("teach_errors.json")).unwrap();
    let failures: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 2);
    assert!(report.contains("timed out"), "{report}");
}

#[test]
fn teach_external_crash_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 6, 2);
    let out = external_teach(&corpus, &output, "[\"--mode\", \"crash-after-handshake\"]", 10);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(output.join("teach_errors.json").exists());
}

#[test]
fn teach_external_protocol_violations_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let output = dir.path().join("out");
    simulate(&corpus, 6, 2);
    for mode in ["bad-id", "bad-json"] {
        let out = external_teach(&corpus, &output, &format!("[\"--mode\", \"{mode}\"]"), 10);
        assert_eq!(code(&out), 2, "mode {mode}: {}", stderr(&out));
        let report = std::fs::read_to_string(output.join("teach_errors.json")).unwrap();
        assert_eq!(
            serde_json::from_str::<serde_json::Value>(&report)
                .unwrap()
                .as_array()
                .unwrap()
                .len(),
            2
        );
    }
}
