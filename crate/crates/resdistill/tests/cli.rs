//! End-to-end tests of the `resdistill` binary: determinism of the data
//! generator, the zero-weight distillation degeneracy through the CLI, report
//! aggregation against the persisted JSON files, and the error contract
//! (distinct machine-readable prefixes, nonzero exit codes).

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resdistill"))
}

fn run_ok(args: &[&str], out_root: &Path) -> Output {
    let out = bin()
        .args(args)
        .env("RESDISTILL_OUT", out_root)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn hash_dir(dir: &Path) -> String {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    let mut hasher = Sha256::new();
    for path in entries {
        hasher.update(path.file_name().unwrap().to_string_lossy().as_bytes());
        hasher.update(fs::read(&path).unwrap());
    }
    format!("{:x}", hasher.finalize())
}

#[test]
fn synth_data_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        run_ok(
            &[
                "synth-data",
                "--classes",
                "3",
                "--per-class",
                "8",
                "--size",
                "32",
                "--seed",
                "5",
                "--out",
                tmp.path().join(name).to_str().unwrap(),
            ],
            tmp.path(),
        );
    }
    assert_eq!(
        hash_dir(&tmp.path().join("a")),
        hash_dir(&tmp.path().join("b")),
        "same seed must produce byte-identical datasets"
    );
}

/// `distill` with all weights zero, then `eval`, matches a plain run's
/// metrics end to end.
#[test]
fn zero_weight_distill_equals_plain_run_through_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(
        &[
            "synth-data",
            "--classes",
            "3",
            "--per-class",
            "10",
            "--size",
            "32",
            "--seed",
            "3",
            "--out",
            data.to_str().unwrap(),
        ],
        tmp.path(),
    );
    let manifest = data.join("manifest.csv");
    let common = [
        "--manifest",
        manifest.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--learning-rate",
        "0.001",
        "--magnification",
        "2",
        "--seeds",
        "4",
    ];

    let mut plain_args = vec!["distill"];
    plain_args.extend_from_slice(&common);
    plain_args.extend_from_slice(&["--name", "plain"]);
    run_ok(&plain_args, tmp.path());

    // Same config but spelled through the distillation path with zero weights.
    let mut zero_args = vec!["distill"];
    zero_args.extend_from_slice(&common);
    zero_args.extend_from_slice(&["--alpha-fm", "0", "--alpha-at", "0", "--name", "zero"]);
    run_ok(&zero_args, tmp.path());

    let eval = |name: &str| -> serde_json::Value {
        let out = run_ok(
            &[
                "eval",
                "--checkpoint",
                tmp.path()
                    .join(format!("runs/{name}/seed4/model.atdm"))
                    .to_str()
                    .unwrap(),
                "--manifest",
                manifest.to_str().unwrap(),
                "--split",
                "test",
                "--magnification",
                "2",
            ],
            tmp.path(),
        );
        serde_json::from_slice(&out.stdout).expect("eval emits JSON")
    };
    let (p, z) = (eval("plain"), eval("zero"));
    assert_eq!(p["accuracy"], z["accuracy"]);
    assert_eq!(p["kappa"], z["kappa"]);
    assert_eq!(p["per_class_accuracy"], z["per_class_accuracy"]);

    // The trajectories must agree too, not just the endpoints.
    let log = |name: &str| {
        fs::read_to_string(tmp.path().join(format!("runs/{name}/seed4/losses.jsonl"))).unwrap()
    };
    assert_eq!(log("plain"), log("zero"));
}

/// `report` aggregates exactly what the persisted report.json files say.
#[test]
fn report_matches_aggregation_oracle_over_run_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(
        &[
            "synth-data",
            "--classes",
            "3",
            "--per-class",
            "10",
            "--size",
            "32",
            "--seed",
            "2",
            "--out",
            data.to_str().unwrap(),
        ],
        tmp.path(),
    );
    let manifest = data.join("manifest.csv");
    for (name, mag) in [("b1", "1"), ("b2", "2")] {
        run_ok(
            &[
                "distill",
                "--manifest",
                manifest.to_str().unwrap(),
                "--epochs",
                "1",
                "--batch-size",
                "8",
                "--learning-rate",
                "0.001",
                "--magnification",
                mag,
                "--seeds",
                "0,1",
                "--name",
                name,
            ],
            tmp.path(),
        );
    }

    let csv_path = tmp.path().join("summary.csv");
    run_ok(
        &[
            "report",
            "--runs",
            tmp.path().join("runs").to_str().unwrap(),
            "--csv",
            csv_path.to_str().unwrap(),
        ],
        tmp.path(),
    );

    // Oracle: recompute mean/std from the report.json files themselves.
    let mut oracle: HashMap<(String, u32), Vec<f64>> = HashMap::new();
    for name in ["b1", "b2"] {
        for seed in [0u64, 1] {
            let report: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(
                    tmp.path().join(format!("runs/{name}/seed{seed}/report.json")),
                )
                .unwrap(),
            )
            .unwrap();
            let mag = report["train"]["magnification"].as_u64().unwrap() as u32;
            oracle
                .entry(("baseline".into(), mag))
                .or_default()
                .push(report["test_accuracy"].as_f64().unwrap());
        }
    }

    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut seen = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let preset = cols[0].to_string();
        let mag: u32 = cols[1].parse().unwrap();
        let mean: f64 = cols[3].parse().unwrap();
        if let Some(values) = oracle.get(&(preset, mag)) {
            let expect = values.iter().sum::<f64>() / values.len() as f64;
            assert!(
                (mean - expect).abs() < 1e-9,
                "CSV mean {mean} disagrees with oracle {expect} for magnification {mag}"
            );
            seen += 1;
        }
    }
    assert_eq!(seen, 2, "both baseline magnifications must appear in the CSV");
}

#[test]
fn errors_are_machine_readable_and_nonzero() {
    let tmp = tempfile::tempdir().unwrap();

    // Unknown flag: clap's own error, nonzero exit.
    let out = bin()
        .args(["synth-data", "--no-such-flag"])
        .env("RESDISTILL_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());

    // Malformed config file.
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = bin()
        .args([
            "distill",
            "--config",
            bad.to_str().unwrap(),
            "--manifest",
            "whatever.csv",
        ])
        .env("RESDISTILL_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("error[config]:"),
        "expected error[config] prefix, got: {stderr}"
    );

    // Missing manifest file.
    let out = bin()
        .args([
            "distill",
            "--manifest",
            tmp.path().join("missing.csv").to_str().unwrap(),
            "--epochs",
            "1",
        ])
        .env("RESDISTILL_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("error[data]:") || stderr.starts_with("error[io]:"),
        "expected a data/io prefix, got: {stderr}"
    );

    // Missing checkpoint: distinct prefix from the two above.
    let out = bin()
        .args([
            "eval",
            "--checkpoint",
            tmp.path().join("missing.atdm").to_str().unwrap(),
            "--manifest",
            tmp.path().join("missing.csv").to_str().unwrap(),
            "--split",
            "test",
            "--magnification",
            "1",
        ])
        .env("RESDISTILL_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("error[checkpoint]:") || stderr.starts_with("error[io]:"),
        "expected checkpoint/io prefix, got: {stderr}"
    );
}
