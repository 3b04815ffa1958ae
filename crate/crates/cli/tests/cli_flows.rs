//! End-to-end command flows on a small corpus.

use std::path::Path;
use std::process::{Command, Output};

fn anct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anct"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = anct(args);
    assert!(
        out.status.success(),
        "anct {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_predict_attn_flow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let evald = dir.path().join("eval");
    let attn = dir.path().join("attn");

    ok(&[
        "synth", "--count", "12", "--seed", "3", "--raters", "2",
        "--out", path_str(&data),
    ]);
    assert!(data.join("manifest.jsonl").is_file());
    assert!(data.join("synth00000.nvl").is_file());

    let manifest = data.join("manifest.jsonl");
    ok(&[
        "train",
        "--data", path_str(&manifest),
        "--out", path_str(&run),
        "--preset", "tiny",
        "--epochs", "2",
        "--seed", "1",
        "--fold-test", "0",
    ]);
    for artifact in ["model.ckpt", "config.json", "stats.json", "report.json", "timing.log"] {
        assert!(run.join(artifact).is_file(), "missing {artifact}");
    }

    let ckpt = run.join("model.ckpt");
    ok(&[
        "eval",
        "--ckpt", path_str(&ckpt),
        "--data", path_str(&manifest),
        "--fold-test", "0",
        "--out", path_str(&evald),
    ]);
    let csv = std::fs::read_to_string(evald.join("eval.csv")).unwrap();
    assert!(csv.starts_with("attribute,mae\n"));
    assert_eq!(csv.lines().count(), 11);
    let attn_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(evald.join("attn.json")).unwrap()).unwrap();
    assert!(attn_json.get("sam").is_some());
    assert!(attn_json.get("caam_mean_raw").is_some());
    assert!(attn_json.get("gt_corr").is_some());
    assert!(attn_json.get("ib").is_some());

    let predict = ok(&[
        "predict",
        "--ckpt", path_str(&ckpt),
        "--volume", path_str(&data.join("synth00000.nvl")),
    ]);
    let text = String::from_utf8_lossy(&predict.stdout).to_string();
    assert_eq!(text.lines().count(), 9);
    for line in text.lines() {
        let (name, value) = line.split_once(": ").unwrap();
        let v: f64 = value.parse().unwrap();
        assert!((1.0..=6.0).contains(&v), "{name} out of scale: {v}");
    }

    ok(&[
        "attn-export",
        "--ckpt", path_str(&ckpt),
        "--data", path_str(&manifest),
        "--fold-test", "0",
        "--out", path_str(&attn),
    ]);
    let records = std::fs::read_to_string(attn.join("records.jsonl")).unwrap();
    assert!(records.lines().count() >= 2);
    let first: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert!(first.get("sam_weights").is_some());
    assert!(first.get("caam_weights").is_some());
}

#[test]
fn train_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--count", "6", "--seed", "9", "--out", path_str(&data)]);
    let manifest = data.join("manifest.jsonl");

    let mut checkpoints = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        ok(&[
            "train",
            "--data", path_str(&manifest),
            "--out", path_str(&run),
            "--preset", "tiny",
            "--epochs", "2",
            "--seed", "5",
        ]);
        checkpoints.push(std::fs::read(run.join("model.ckpt")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1], "checkpoints differ across reruns");
}

#[test]
fn synth_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    let mut volumes = Vec::new();
    for name in ["a", "b"] {
        let data = dir.path().join(name);
        ok(&["synth", "--count", "4", "--seed", "7", "--raters", "2", "--out", path_str(&data)]);
        manifests.push(std::fs::read(data.join("manifest.jsonl")).unwrap());
        volumes.push(std::fs::read(data.join("synth00002.nvl")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    assert_eq!(volumes[0], volumes[1]);
}

#[test]
fn unknown_flags_and_bad_inputs_exit_one() {
    let out = anct(&["train", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));

    let out = anct(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    // missing required flag names the flag
    let out = anct(&["synth", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--count"), "{err}");

    // validation error in the dataset
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, "{\"id\":\"x\",\"volume\":\"missing.nvl\",\"ratings\":{}}\n").unwrap();
    let out = anct(&["train", "--data", path_str(&manifest), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn lambda_zero_equals_no_ascmm_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--count", "6", "--seed", "2", "--out", path_str(&data)]);
    let manifest = data.join("manifest.jsonl");

    let run_l0 = dir.path().join("l0");
    let run_off = dir.path().join("off");
    ok(&[
        "train", "--data", path_str(&manifest), "--out", path_str(&run_l0),
        "--preset", "tiny", "--epochs", "2", "--seed", "3", "--lambda", "0",
    ]);
    ok(&[
        "train", "--data", path_str(&manifest), "--out", path_str(&run_off),
        "--preset", "tiny", "--epochs", "2", "--seed", "3", "--no-ascmm",
    ]);
    // identical final predictions on a fixed volume
    for run in [&run_l0, &run_off] {
        let out = ok(&[
            "predict",
            "--ckpt", path_str(&run.join("model.ckpt")),
            "--volume", path_str(&data.join("synth00001.nvl")),
        ]);
        std::fs::write(run.join("pred.txt"), out.stdout).unwrap();
    }
    let a = std::fs::read(run_l0.join("pred.txt")).unwrap();
    let b = std::fs::read(run_off.join("pred.txt")).unwrap();
    assert_eq!(a, b);
}
