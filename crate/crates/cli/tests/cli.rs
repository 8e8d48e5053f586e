//! The `nhnn` binary end to end: outputs, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn nhnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhnn"))
        .args(args)
        .env_remove("NHNN_DTYPE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nhnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with("warning:")).collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    lines[0].to_string()
}

fn small_dataset(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    ok(&["gen", "--out", p(&path), "--seed", seed, "--nodes", "60", "--edges", "24", "--feature-dim", "8"]);
    path
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path(), "a.nhnn", "5");
    let b = small_dataset(dir.path(), "b.nhnn", "5");
    let c = small_dataset(dir.path(), "c.nhnn", "6");
    let bytes = |x: &Path| std::fs::read(x).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    assert_eq!(&bytes(&a)[..4], b"NHNN");
}

#[test]
fn train_eval_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.nhnn", "1");
    let before = std::fs::read(&data).unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"train": {"epochs": 30, "patience": 10}, "model": {"hidden": 8}}"#).unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--dataset", p(&data), "--out", p(&out), "--config", p(&config), "--lambda", "0.01", "--seed", "2"]);
    assert_eq!(std::fs::read(&data).unwrap(), before, "dataset untouched");

    for f in ["loss_curve.csv", "alpha.csv", "alpha_layer0.csv", "alpha_layer1.csv", "params.nhnp", "result.json", "ledger.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let ledger = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    let mut lines = ledger.lines();
    assert!(lines.next().unwrap().starts_with("ledger_version,run_id,dataset,variant,factors,hidden,layers,lambda"));
    let row = lines.next().unwrap();
    assert!(row.contains(",full,2,8,2,0.01,"), "{row}");
    assert!(lines.next().is_none());
    let alpha = std::fs::read_to_string(out.join("alpha.csv")).unwrap();
    assert!(alpha.starts_with("hyperedge,alpha_0,alpha_1\n"));
    assert_eq!(alpha.lines().count(), 25);
    let curve = std::fs::read_to_string(out.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_task_loss"));

    let eval = ok(&["eval", "--params", p(&out.join("params.nhnp")), "--dataset", p(&data), "--split", "test"]);
    let metrics: serde_json::Value = serde_json::from_str(eval.trim()).unwrap();
    let result: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(metrics["macro_f1"], result["test"]["macro_f1"]);

    let analysis = dir.path().join("analysis");
    let clusters = dir.path().join("clusters.csv");
    let body: String = (0..24).map(|e| format!("{e},{}\n", e % 3)).collect();
    std::fs::write(&clusters, format!("hyperedge,cluster\n{body}")).unwrap();
    ok(&["analyze", "--alpha", p(&out.join("alpha.csv")), "--dataset", p(&data), "--clusters", p(&clusters), "--out", p(&analysis)]);
    for f in ["pearson.csv", "similarity.csv", "cluster_similarity.csv", "recovery.csv"] {
        assert!(analysis.join(f).exists(), "{f} missing");
    }
    let recovery = std::fs::read_to_string(analysis.join("recovery.csv")).unwrap();
    assert!(recovery.starts_with("auc,ari,column,flipped,hyperedges\n"));
}

#[test]
fn same_seed_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.nhnn", "3");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["train", "--dataset", p(&data), "--out", p(&out), "--seed", "4", "--hidden", "8", "--factors", "2", "--layers", "1"]);
        (
            std::fs::read(out.join("params.nhnp")).unwrap(),
            std::fs::read(out.join("loss_curve.csv")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn duplicate_alpha_columns_correlate_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let alpha = dir.path().join("alpha.csv");
    std::fs::write(&alpha, "hyperedge,alpha_0,alpha_1\n0,0.1,0.1\n1,0.7,0.7\n2,0.4,0.4\n3,0.9,0.9\n").unwrap();
    let out = dir.path().join("a");
    ok(&["analyze", "--alpha", p(&alpha), "--out", p(&out)]);
    let pearson = std::fs::read_to_string(out.join("pearson.csv")).unwrap();
    assert_eq!(pearson, "factor,factor_0,factor_1\n0,1,1\n1,1,1\n");
}

#[test]
fn gradcheck_passes_on_default_sizes() {
    let stdout = ok(&["gradcheck", "--seeds", "2"]);
    assert!(stdout.contains("model_full_node"));
    assert!(!stdout.contains("FAILED"));
}

#[test]
fn bench_emits_timing_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    ok(&["bench", "--nodes", "64", "--edges", "32", "--incidences", "256", "--points", "3", "--trials", "2", "--out", p(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "nodes,edges,incidences,hidden,factors,trials,median_seconds");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("64,32,1024,"));
}

#[test]
fn sweep_writes_per_run_outputs_and_one_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{"variants": ["full", "hgnn"], "train_ratios": [0.5, 0.1], "seeds": [0, 1],
            "synthetic": {"num_nodes": 60, "num_edges": 24, "feature_dim": 8}}"#,
    )
    .unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"train": {"epochs": 10, "patience": 5}, "model": {"hidden": 8}}"#).unwrap();
    let out = dir.path().join("sweep");
    ok(&["sweep", "--grid", p(&grid), "--config", p(&config), "--out", p(&out), "--jobs", "2"]);
    let ledger = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 9);
    let ids: Vec<&str> = ledger.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ids, (0..8).map(|i| format!("run{i:04}")).collect::<Vec<_>>());
    assert!(out.join("runs/run0007/loss_curve.csv").exists());
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 5);
}

#[test]
fn f32_precision_via_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.nhnn", "2");
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_nhnn"))
        .args(["train", "--dataset", p(&data), "--out", p(&out), "--hidden", "8", "--layers", "1"])
        .env("NHNN_DTYPE", "f32")
        .output()
        .unwrap();
    assert!(status.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_nhnn"))
        .args(["gradcheck", "--seeds", "1"])
        .env("NHNN_DTYPE", "f16")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn errors_are_single_lines_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.nhnn");

    let out = nhnn(&["train", "--dataset", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error: BadArguments: "));

    let out = nhnn(&["train", "--variant", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error: BadArguments: "));

    let junk = dir.path().join("junk.nhnn");
    std::fs::write(&junk, b"not a dataset").unwrap();
    let out = nhnn(&["train", "--dataset", p(&junk), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error: MalformedFile: "));

    let data = small_dataset(dir.path(), "d.nhnn", "1");
    let out = nhnn(&["train", "--dataset", p(&data), "--out", p(dir.path()), "--hidden", "7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error: InvalidConfig: "));

    // Output directory blocked by a regular file.
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = nhnn(&["train", "--dataset", p(&data), "--out", p(&blocker.join("sub")), "--hidden", "8"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).starts_with("error: Io: "));
}
