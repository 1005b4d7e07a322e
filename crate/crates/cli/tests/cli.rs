//! End-to-end checks of the `trajattr` binary: subcommands, artifact
//! emission, rendering, and exit codes (0 ok, 1 user error, 2 pipeline
//! failure, 3 validation failure).

use std::path::Path;
use std::process::{Command, Output};

fn trajattr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajattr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    std::fs::write(
        &path,
        "n_traj = 16\nmax_len = 30\nepochs = 3\nd_model = 12\nk_max = 4\ntop_n = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn run_emits_artifacts_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_config(tmp.path());
    let out = trajattr(
        &["run", "--config", cfg.to_str().unwrap(), "--out", "myrun"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gen-data"));
    assert!(stdout.contains("report"));
    for artifact in ["dataset.jsonl", "encoder.ckpt", "clusters.csv", "metrics.csv"] {
        assert!(tmp.path().join("myrun").join(artifact).exists(), "{artifact} missing");
    }

    // validate the healthy run
    let out = trajattr(&["validate", "myrun"], tmp.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // explain a non-terminal state in text form
    let out = trajattr(&["explain", "myrun", "(1,1)"], tmp.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("original action"));

    // svg format writes one file per exemplar
    let out = trajattr(&["explain", "myrun", "1,1", "--format", "svg"], tmp.path());
    assert!(out.status.success());
    let listed = String::from_utf8_lossy(&out.stdout);
    for line in listed.lines().filter(|l| l.ends_with(".svg")) {
        assert!(tmp.path().join(line.trim()).exists(), "svg {line} missing");
    }

    // terminal state is a user error
    let out = trajattr(&["explain", "myrun", "(0,6)"], tmp.path());
    assert_eq!(out.status.code(), Some(1), "terminal state should exit 1");

    // nonsense state string is a user error
    let out = trajattr(&["explain", "myrun", "nowhere"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_stage_subcommand_runs_prefix_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_config(tmp.path());
    let out = trajattr(
        &["gen-data", "--config", cfg.to_str().unwrap(), "--out", "r"],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(tmp.path().join("r/dataset.jsonl").exists());
    assert!(!tmp.path().join("r/encoder.ckpt").exists());
}

#[test]
fn bad_config_is_a_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.txt");
    std::fs::write(&cfg, "made_up_key = 1\n").unwrap();
    let out = trajattr(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("made_up_key"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_a_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = trajattr(&["run", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tampered_run_fails_validation_with_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_config(tmp.path());
    let out = trajattr(
        &["run", "--config", cfg.to_str().unwrap(), "--out", "v"],
        tmp.path(),
    );
    assert!(out.status.success());

    // corrupt one simplex row
    let path = tmp.path().join("v/data_embeddings.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = {
        let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
        for f in fields.iter_mut().skip(1) {
            let v: f64 = f.parse().unwrap();
            *f = (v * 3.0).to_string();
        }
        fields.join(",")
    };
    std::fs::write(&path, lines.join("\n")).unwrap();

    let out = trajattr(&["validate", "v"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "stdout: {stdout}");
}

#[test]
fn seed_override_rewrites_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_config(tmp.path());
    let out = trajattr(
        &[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "s",
            "--seed-override",
            "123",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let resolved = std::fs::read_to_string(tmp.path().join("s/config.resolved")).unwrap();
    assert!(resolved.contains("data_seed = 123"));
    assert!(resolved.contains("encoder_seed = 124"));
    assert!(resolved.contains("cluster_seed = 125"));
}
