use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use relamix::trainer::{read_reports_csv, EvalReport};

fn relamix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relamix"))
        .args(args)
        .env_remove("NO_COLOR")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_GRID: &str = r#"{
    "model": {"window_len": 8, "bottleneck_dim": 8, "model_dim": 16},
    "train": {"max_epochs": 1, "max_batches_per_epoch": 2},
    "data": {"source": {"type": "synth", "kind": "gbm_ohlcv", "length": 900, "seed": 4}},
    "delay_ratios": [0.15, 0.35],
    "horizons": [1, 5]
}"#;

#[test]
fn zero_ratio_reproduces_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = relamix(&["simulate", "--synth", "gbm_ohlcv", "--length", "500", "--ratio", "0", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let clean = fs::read(dir.path().join("clean.csv")).unwrap();
    let corrupted = fs::read(dir.path().join("corrupted.csv")).unwrap();
    assert_eq!(clean, corrupted);
    assert!(dir.path().join("mask.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn csv_input_round_trips_at_zero_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert!(relamix(&["simulate", "--synth", "sine", "--length", "300", "--ratio", "0.3", "--out", p(&a)])
        .status
        .success());
    let b = dir.path().join("b");
    let input = a.join("clean.csv");
    let o = relamix(&["simulate", "--input", p(&input), "--ratio", "0", "--out", p(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&input).unwrap(), fs::read(b.join("corrupted.csv")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn million_step_simulation_hits_the_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = relamix(&["simulate", "--synth", "sine", "--length", "1000000", "--ratio", "0.25", "--seed", "3", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    let f = stats["stagnation_fraction"].as_f64().unwrap();
    assert!((0.24..=0.26).contains(&f), "{f}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing_ratio = relamix(&["simulate", "--synth", "sine", "--out", p(dir.path())]);
    assert_eq!(missing_ratio.status.code(), Some(2));
    let bad_ratio = relamix(&["simulate", "--synth", "sine", "--ratio", "1.5", "--out", p(dir.path())]);
    assert_eq!(bad_ratio.status.code(), Some(2));
    assert!(stderr(&bad_ratio).contains("ratio"));
    let both = relamix(&["simulate", "--synth", "sine", "--input", "x.csv", "--ratio", "0.1", "--out", p(dir.path())]);
    assert_eq!(both.status.code(), Some(2));
    assert_eq!(relamix(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = relamix(&["simulate", "--input", "/nonexistent/x.csv", "--ratio", "0.1", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

fn train_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn train_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(
        dir.path(),
        r#"{"model": {"L": 8, "d_b": 8, "D_model": 16},
            "train": {"max_epochs": 2, "max_batches_per_epoch": 3, "seed": 5},
            "data": {"source": {"type": "synth", "kind": "sine_mixture", "length": 700}}}"#,
    );
    let a = dir.path().join("a");
    let o = relamix(&["train", "--config", p(&cfg), "--out", p(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "params.bin", "history.csv", "report.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let b = dir.path().join("b");
    let o = relamix(&["train", "--manifest", p(&a.join("manifest.json")), "--out", p(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("params.bin")).unwrap(), fs::read(b.join("params.bin")).unwrap());
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
    let history = fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));
}

#[test]
fn train_echoes_defaults_into_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(
        dir.path(),
        r#"{"train": {"max_epochs": 1, "max_batches_per_epoch": 1},
            "data": {"source": {"type": "synth", "kind": "sine_mixture", "length": 400}}}"#,
    );
    let out = dir.path().join("out");
    let o = relamix(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let c = &m["config"];
    assert_eq!(c["train"]["batch_size"], 32);
    assert_eq!(c["train"]["learning_rate"], 1e-3);
    assert_eq!(c["train"]["patience"], 10);
    assert_eq!(c["model"]["bottleneck_dim"], 32);
    assert_eq!(c["model"]["window_len"], 20);
    assert_eq!(c["delay_ratio"], 0.25);
    assert_eq!(m["command"], "train");
}

#[test]
fn raw_metrics_appear_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let base = r#""train": {"max_epochs": 1, "max_batches_per_epoch": 1},
        "data": {"source": {"type": "synth", "kind": "gbm_ohlcv", "length": 600}}"#;
    for (raw, name) in [(false, "std"), (true, "raw")] {
        let cfg = train_config(dir.path(), &format!(r#"{{{base}, "raw_metrics": {raw}}}"#));
        let out = dir.path().join(name);
        let o = relamix(&["train", "--config", p(&cfg), "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let r: EvalReport =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(r.raw.is_some(), raw);
        if let Some(x) = r.raw {
            assert_eq!(x.per_feature.len(), 5);
            // prices live far from unit scale
            assert!(x.metrics.mse != r.mse);
        }
    }
}

#[test]
fn invalid_model_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(dir.path(), r#"{"model": {"d_b": 128, "D_model": 64}}"#);
    let o = relamix(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bottleneck_dim"), "{}", stderr(&o));

    let cfg = train_config(dir.path(), r#"{"modle": {}}"#);
    let o = relamix(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(
        dir.path(),
        r#"{"model": {"L": 8, "d_b": 8, "D_model": 16, "dropout": 0.0},
            "train": {"learning_rate": 1e300, "max_epochs": 3, "max_batches_per_epoch": 5},
            "data": {"source": {"type": "synth", "kind": "sine_mixture", "length": 600}}}"#,
    );
    let o = relamix(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

fn read_reports(path: &Path) -> Vec<EvalReport> {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn grid_writes_reports_table_and_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(dir.path(), SMALL_GRID);
    let out = dir.path().join("g");
    let o = relamix(&["grid", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports = read_reports(&out.join("reports.json"));
    assert_eq!(reports.len(), 2 * 2 * 5);
    assert_eq!(fs::read_dir(out.join("cells")).unwrap().count(), 2 * 20);
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(table.contains("15%/k=1") && table.contains("relamix (no_residual)"));
    assert!(!table.contains('\x1b'));
    for r in &reports {
        let fields = serde_json::to_value(r).unwrap();
        for key in ["model", "ablation", "delay_ratio", "k", "mse", "mae", "r2", "params", "epochs", "seed", "mask_hash", "config_hash"] {
            assert!(fields.get(key).is_some(), "{key}");
        }
    }
}

#[test]
fn grid_model_selection_drops_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(dir.path(), SMALL_GRID);
    let out = dir.path().join("g");
    let o = relamix(&["grid", "--config", p(&cfg), "--models", "relamix", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports = read_reports(&out.join("reports.json"));
    assert_eq!(reports.len(), 2 * 2 * 3);
    assert!(reports.iter().all(|r| r.model == "relamix"));
}

#[test]
fn default_grid_table_shows_the_head_increments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(
        dir.path(),
        r#"{"train": {"max_epochs": 1, "max_batches_per_epoch": 1},
            "data": {"source": {"type": "synth", "kind": "gbm_ohlcv", "length": 1500}},
            "delay_ratios": [0.15]}"#,
    );
    let out = dir.path().join("g");
    let o = relamix(&["grid", "--config", p(&cfg), "--models", "full", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    let row = table
        .lines()
        .find(|l| l.starts_with("relamix ") && l.contains("Params"))
        .unwrap();
    let counts: Vec<i64> = row.split_whitespace().skip(2).map(|v| v.parse().unwrap()).collect();
    let steps: Vec<i64> = counts.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(steps, vec![660, 330, 495]);
    assert!(steps.iter().zip([4, 2, 3]).all(|(d, dk)| *d == 165 * dk));
}

#[test]
fn report_merges_sorts_and_converts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(dir.path(), SMALL_GRID);
    let out = dir.path().join("g");
    assert!(relamix(&["grid", "--config", p(&cfg), "--models", "full,persistence", "--out", p(&out)])
        .status
        .success());
    let cells = out.join("cells");

    let json = relamix(&["report", "--in", p(&cells), "--format", "json"]);
    assert!(json.status.success());
    let merged: Vec<EvalReport> = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(merged, read_reports(&out.join("reports.json")));
    let again = relamix(&["report", "--in", p(&cells), "--format", "json"]);
    assert_eq!(json.stdout, again.stdout);

    let csv = relamix(&["report", "--in", p(&out), "--format", "csv"]);
    assert!(csv.status.success());
    assert_eq!(read_reports_csv(&csv.stdout[..]).unwrap(), merged);

    let table = relamix(&["report", "--in", p(&out), "--format", "table"]);
    assert!(String::from_utf8(table.stdout).unwrap().contains("persistence"));
}

#[test]
fn report_on_empty_and_missing_directories() {
    let dir = tempfile::tempdir().unwrap();
    let o = relamix(&["report", "--in", p(dir.path()), "--format", "json"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "[]");
    let o = relamix(&["report", "--in", "/nonexistent/dir", "--format", "json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn grid_with_failing_cells_exits_nonzero_but_keeps_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(
        dir.path(),
        r#"{"model": {"window_len": 8, "bottleneck_dim": 8, "model_dim": 16},
            "train": {"max_epochs": 1, "max_batches_per_epoch": 1},
            "data": {"source": {"type": "synth", "kind": "gbm_ohlcv", "length": 300}},
            "delay_ratios": [0.15], "horizons": [1, 60], "models": ["linear"]}"#,
    );
    let out = dir.path().join("g");
    let o = relamix(&["grid", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(out.join("failures.json").exists());
    assert_eq!(read_reports(&out.join("reports.json")).len(), 1);
}
