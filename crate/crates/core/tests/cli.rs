//! End-to-end runs of the `coevo` binary.

use std::path::Path;
use std::process::{Command, Output};

fn coevo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coevo"))
        .args(args)
        .env_remove("COEVO_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = "[data.synthetic]\nn = 24\nt = 5\nr = 6\nseed = 7\n[model]\ndim = 8\nepochs = 2\n";

fn generate(dir: &Path) -> std::path::PathBuf {
    let config = dir.join("exp.toml");
    std::fs::write(&config, SPEC).unwrap();
    let data = dir.join("seq.bin");
    let out = coevo(&["generate", "--spec", s(&config), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    data
}

#[test]
fn ingest_summarizes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    std::fs::write(&edges, "source,target,rating,time\n1,2,1,0\n2,3,1,50\n3,1,1,120\n1,3,-2,250\n").unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    let out = coevo(&["ingest", "--edges", s(&edges), "--window", "100", "--out", s(&a)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("nodes 3") && text(&out).contains("snapshots 3"), "{}", text(&out));
    coevo(&["ingest", "--edges", s(&edges), "--window", "100", "--out", s(&b)]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = coevo(&["ingest", "--edges", s(&missing), "--window", "10", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("nope.csv"), "{}", text(&out));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data.synthetic]\nn = 0\n").unwrap();
    let out = coevo(&["generate", "--spec", s(&bad), "--out", s(&dir.path().join("y"))]);
    assert_eq!(code(&out), 2, "{}", text(&out));

    let data = generate(dir.path());
    std::fs::write(&bad, "[model]\nspna = 2\n").unwrap();
    let out = coevo(&["train", "--data", s(&data), "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2, "{}", text(&out));
    let out = coevo(&["train", "--data", s(&data), "--train-range", "4..4", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let out = coevo(&["analyze", "--data", s(&dir.path().join("absent.bin")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let first = std::fs::read(&data).unwrap();
    assert!(dir.path().join("seq.bin.spec.toml").exists());
    generate(dir.path());
    assert_eq!(std::fs::read(&data).unwrap(), first);
    let out = Command::new(env!("CARGO_BIN_EXE_coevo"))
        .args(["generate", "--spec", s(&dir.path().join("exp.toml")), "--out", s(&data)])
        .env("COEVO_SEED", "8")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_ne!(std::fs::read(&data).unwrap(), first);
}

#[test]
fn train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let config = dir.path().join("exp.toml");
    let run = dir.path().join("run");
    let out = coevo(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&run), "--train-range", "3..4"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("T' = 1 transitions"), "{}", text(&out));
    for file in ["checkpoint.ckpt", "loss.csv", "attention.csv", "manifest.json"] {
        assert!(run.join(file).exists(), "{file}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config"]["train_range"], serde_json::json!([3, 4]));
    assert_eq!(std::fs::read_to_string(run.join("loss.csv")).unwrap().lines().count(), 3);

    let ev = dir.path().join("eval");
    let ckpt = run.join("checkpoint.ckpt");
    let out = coevo(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--holdout-last", "--random-baseline", "--out", s(&ev)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("[random baseline]"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("eval.json")).unwrap()).unwrap();
    assert!(report["model"]["links"]["pr_auc"].is_number());
    assert!(report["baseline"]["attributes"]["rmse"].is_number());
}

#[test]
fn analyze_writes_normalized_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let out_dir = dir.path().join("analysis");
    let out = coevo(&["analyze", "--data", s(&data), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    for file in ["recurrence.csv", "triad_closure.csv"] {
        let csv = std::fs::read_to_string(out_dir.join(file)).unwrap();
        let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9 || total == 0.0, "{file}: {total}");
    }
}

#[test]
fn gradcheck_exit_codes() {
    let out = coevo(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("Gamma") && text(&out).contains("agg1.layer1.weight"));
    let out = coevo(&["gradcheck", "--corrupt-backward"]);
    assert_eq!(code(&out), 4);
    assert!(text(&out).contains("gradient check failed"));
}
