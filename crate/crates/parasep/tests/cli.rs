//! End-to-end checks of the command line binary: exit codes, output files,
//! and byte-level determinism across backends and thread counts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parasep"))
}

fn small_study_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("study.json");
    std::fs::write(
        &path,
        r#"{
            "problem": {"diffusion1d": {"a": -3.0, "b": 3.0, "n_cells": 24}},
            "mu_trial": {"start": 1.0, "stop": 3.0, "count": 41},
            "stage_one_caps": [4, 6],
            "stage_two_rule": {"offset": {"add": 1}},
            "stage_one_tol": {"absolute": {"value": 0.0}},
            "stage_two_tol": {"absolute": {"value": 0.0}},
            "solve_errors": true
        }"#,
    )
    .unwrap();
    path
}

fn small_rbm_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("rbm.json");
    std::fs::write(
        &path,
        r#"{
            "problem": {"diffusion1d": {"a": -3.0, "b": 3.0, "n_cells": 24}},
            "mu_train": {"start": 1.0, "stop": 3.0, "count": 41},
            "stage_one_cap": 6,
            "stage_two_rule": {"offset": {"add": 1}},
            "stage_one_tol": {"absolute": {"value": 0.0}},
            "stage_two_tol": {"absolute": {"value": 0.0}},
            "n_hat_max": 5,
            "rb_tol": 0.0
        }"#,
    )
    .unwrap();
    path
}

fn small_audit_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("audit.json");
    std::fs::write(
        &path,
        r#"{
            "problem": {"diffusion1d": {"a": -3.0, "b": 3.0, "n_cells": 24}},
            "mu_trial": {"start": 1.0, "stop": 3.0, "count": 41},
            "stage_one_cap": 8,
            "stage_two_rule": {"offset": {"add": 1}},
            "stage_one_tol": {"absolute": {"value": 0.0}},
            "stage_two_tol": {"absolute": {"value": 0.0}},
            "oracle_tol": 1e-5
        }"#,
    )
    .unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn study_runs_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_study_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(bin()
        .args(["run-study", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("--svg"));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cap"), "stdout: {stdout}");
    for name in [
        "matrix_error_4.csv",
        "matrix_error_6.csv",
        "solution_error_4.csv",
        "solution_error_6.csv",
        "summary.json",
        "error_decay.svg",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let head = std::fs::read_to_string(out_dir.join("matrix_error_4.csv")).unwrap();
    assert!(head.starts_with("mu,rel_frobenius_error\n"));
}

#[test]
fn outputs_are_byte_identical_across_thread_counts_and_backends() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_study_config(dir.path());
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    let variants: [(&str, Option<&str>); 3] =
        [("one", Some("1")), ("four", Some("4")), ("seq", None)];
    for (tag, threads) in variants {
        let out_dir = dir.path().join(tag);
        let mut c = bin();
        c.args(["run-study", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir);
        match threads {
            Some(t) => {
                c.env("PARASEP_THREADS", t);
            }
            None => {
                c.arg("--sequential");
            }
        }
        let out = run(&mut c);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort_by(|a, b| a.0.cmp(&b.0));
        outputs.push(files);
    }
    // Thread count must not change a single byte anywhere.
    assert_eq!(outputs[0], outputs[1], "1-thread and 4-thread runs differ");
    // The sequential backend differs only in the backend label of the
    // summary; every numerical table matches byte for byte.
    for ((name_a, bytes_a), (name_b, bytes_b)) in outputs[0].iter().zip(&outputs[2]) {
        assert_eq!(name_a, name_b);
        if name_a.ends_with(".csv") {
            assert_eq!(bytes_a, bytes_b, "{name_a} differs across backends");
        }
    }
}

#[test]
fn config_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown key.
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{
            "problem": {"diffusion1d": {"a": -3.0, "b": 3.0, "n_cells": 24}},
            "mu_trial": {"start": 1.0, "stop": 3.0, "count": 41},
            "stage_one_caps": [4],
            "stage_two_rule": {"offset": {"add": 1}},
            "stage_one_tol": {"absolute": {"value": 0.0}},
            "stage_two_tol": {"absolute": {"value": 0.0}},
            "stage_one_terms": 4
        }"#,
    )
    .unwrap();
    let out = run(bin()
        .args(["run-study", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));

    // Missing file.
    let out = run(bin()
        .args(["run-study", "--config"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(code(&out), 2);

    // Semantically invalid values.
    let invalid = dir.path().join("invalid.json");
    std::fs::write(
        &invalid,
        r#"{
            "problem": {"diffusion1d": {"a": -3.0, "b": 3.0, "n_cells": 24}},
            "mu_trial": {"start": 3.0, "stop": 1.0, "count": 41},
            "stage_one_caps": [4],
            "stage_two_rule": {"offset": {"add": 1}},
            "stage_one_tol": {"absolute": {"value": 0.0}},
            "stage_two_tol": {"absolute": {"value": 0.0}}
        }"#,
    )
    .unwrap();
    let out = run(bin()
        .args(["run-study", "--config"])
        .arg(&invalid)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(code(&out), 2);

    // Argument parse failure (clap's own exit code is also 2).
    let out = run(bin().arg("run-nothing"));
    assert_eq!(code(&out), 2);

    let out = run(bin().env("PARASEP_THREADS", "zero").args(["run-study", "--config"]).arg(&bad).arg("--out").arg(dir.path()));
    assert_eq!(code(&out), 2);
}

#[test]
fn audit_exit_codes_separate_violations_from_success() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_audit_config(dir.path());

    let out = run(bin()
        .args(["audit", "--config"])
        .arg(&cfg)
        .arg("--with-oracles")
        .arg("--out")
        .arg(dir.path().join("clean")));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("clean").join("audit.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("audit passed"));

    let out = run(bin()
        .args(["audit", "--config"])
        .arg(&cfg)
        .arg("--inject-extra-call"));
    assert_eq!(code(&out), 4, "fault injection must exit 4");
    assert!(String::from_utf8_lossy(&out.stdout).contains("VIOLATION"));
}

#[test]
fn rbm_then_replay_reuses_the_stored_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rbm_config(dir.path());
    let run_dir = dir.path().join("run");
    let out = run(bin()
        .args(["run-rbm", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("model").join("model.json").exists());
    assert!(run_dir.join("rb_error_path.csv").exists());

    let replay_a = dir.path().join("replay_a");
    let out = run(bin()
        .args(["replay", "--model"])
        .arg(run_dir.join("model"))
        .arg("--out")
        .arg(&replay_a)
        .args(["--mu-start", "1.2", "--mu-stop", "2.8", "--mu-count", "9"]));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(replay_a.join("betas.csv").exists());
    assert!(replay_a.join("approx_norms.csv").exists());

    let replay_b = dir.path().join("replay_b");
    let out = run(bin()
        .args(["replay", "--model"])
        .arg(run_dir.join("model"))
        .arg("--out")
        .arg(&replay_b)
        .args(["--mu-start", "1.2", "--mu-stop", "2.8", "--mu-count", "9"]));
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(replay_a.join("betas.csv")).unwrap(),
        std::fs::read(replay_b.join("betas.csv")).unwrap(),
        "replay is deterministic"
    );

    // A replay of a missing model directory is a run failure, not a crash.
    let out = run(bin()
        .args(["replay", "--model"])
        .arg(dir.path().join("absent"))
        .arg("--out")
        .arg(dir.path().join("replay_c"))
        .args(["--mu-start", "1.0", "--mu-stop", "2.0", "--mu-count", "3"]));
    assert_eq!(code(&out), 3);
}
