use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hts-cluster"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path) -> PathBuf {
    ok(&[
        "simulate",
        "--output-dir",
        s(dir),
        "--seed",
        "5",
        "--instances-per-cluster",
        "5",
        "--length-range",
        "20:30",
    ]);
    dir.join("dataset.json")
}

fn error_kind(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn simulate_cluster_evaluate_recovers_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(&dir.path().join("d"));
    let labels = dir.path().join("d/labels.json");
    let manifest = json(&dir.path().join("d/manifest.json"));
    assert_eq!(json(&data)["manifest"], manifest);

    let c = dir.path().join("c");
    ok(&[
        "cluster",
        "--input",
        s(&data),
        "--labels",
        s(&labels),
        "--output-dir",
        s(&c),
        "--seed",
        "3",
    ]);
    let model = json(&c.join("model.json"));
    assert_eq!(
        model["manifest"]["dataset_sha256"],
        manifest["dataset_sha256"]
    );
    let trace = std::fs::read_to_string(c.join("loss_trace.csv")).unwrap();
    assert!(trace.lines().nth(1) == Some("level,segment,step,loss"));

    let e = dir.path().join("e");
    let out = ok(&[
        "evaluate",
        "--input",
        s(&data),
        "--labels",
        s(&labels),
        "--model",
        s(&c.join("model.json")),
        "--output-dir",
        s(&e),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ARI"));
    let metrics = json(&e.join("metrics.json"));
    for level in metrics["methods"][0]["levels"].as_array().unwrap() {
        assert!(level["ari"]["mean"].as_f64().unwrap() >= 0.9, "{level}");
    }
}

#[test]
fn evaluate_repeats_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let e = dir.path().join("e");
    ok(&[
        "evaluate",
        "--input",
        s(&data),
        "--labels",
        s(&dir.path().join("labels.json")),
        "--repeats",
        "2",
        "--k-per-level",
        "4,4",
        "--output-dir",
        s(&e),
    ]);
    let metrics = json(&e.join("metrics.json"));
    let methods = metrics["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    assert_eq!(methods[1]["method"], "soft-dtw");
    assert_eq!(
        methods[0]["levels"][0]["nmi"]["values"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
    assert!(methods[0]["levels"][1]["seconds"]["mean"].as_f64().unwrap() >= 0.0);
}

#[test]
fn same_seed_gives_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&[
            "cluster",
            "--input",
            s(&data),
            "--k-per-level",
            "4,4",
            "--seed",
            "7",
            "--output-dir",
            s(&out),
        ]);
        files.push(std::fs::read(out.join("model.json")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn incomplete_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let mut labels = json(&dir.path().join("labels.json"));
    let level2 = labels["2"].as_object_mut().unwrap();
    let first = level2.keys().next().unwrap().clone();
    level2.remove(&first);
    let path = dir.path().join("partial.json");
    std::fs::write(&path, labels.to_string()).unwrap();
    let out = run(&[
        "evaluate",
        "--input",
        s(&data),
        "--labels",
        s(&path),
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "data");
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels incomplete"));
}

#[test]
fn usage_errors_exit_one_with_json() {
    let out = run(&["cluster", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "usage");
    let out = run(&["simulate", "--length-range", "9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
    let out = run(&[
        "cluster",
        "--input",
        "/nonexistent/data.json",
        "--k-per-level",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn model_from_other_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"));
    let b = dir.path().join("b");
    ok(&[
        "simulate",
        "--output-dir",
        s(&b),
        "--seed",
        "6",
        "--instances-per-cluster",
        "5",
        "--length-range",
        "20:30",
    ]);
    let c = dir.path().join("c");
    ok(&[
        "cluster",
        "--input",
        s(&a),
        "--k-per-level",
        "4,4",
        "--output-dir",
        s(&c),
    ]);
    let out = run(&[
        "evaluate",
        "--input",
        s(&b.join("dataset.json")),
        "--labels",
        s(&b.join("labels.json")),
        "--model",
        s(&c.join("model.json")),
        "--output-dir",
        s(&c),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different dataset"));
}

#[test]
fn forecast_with_baseline_reports_fit_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let f = dir.path().join("f");
    ok(&[
        "forecast",
        "--input",
        s(&data),
        "--k-per-level",
        "4,4",
        "--baseline",
        "--output-dir",
        s(&f),
    ]);
    let timing = json(&f.join("timing.json"));
    let fits = timing["fits"].as_u64().unwrap();
    assert!(fits <= 8);
    assert_eq!(timing["baseline"]["fits"].as_u64().unwrap(), 20 * 5);
    let csv = std::fs::read_to_string(f.join("forecasts.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# manifest_sha256: "));
    assert_eq!(lines.next(), Some("instance_id,node_id,t,forecast"));
    assert!(f.join("forecasts_baseline.csv").exists());
    assert!(f.join("model.json").exists());

    // Reusing the fitted model gives the same forecasts.
    let g = dir.path().join("g");
    ok(&[
        "forecast",
        "--input",
        s(&data),
        "--model",
        s(&f.join("model.json")),
        "--output-dir",
        s(&g),
    ]);
    let body = |p: &Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        body(&f.join("forecasts.csv")),
        body(&g.join("forecasts.csv"))
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let config = dir.path().join("config.yaml");
    std::fs::write(&config, "k_per_level: [1, 1]\nseed: 4\n").unwrap();
    let a = dir.path().join("a");
    ok(&[
        "cluster",
        "--input",
        s(&data),
        "--config",
        s(&config),
        "--output-dir",
        s(&a),
    ]);
    let model = json(&a.join("model.json"));
    assert_eq!(model["manifest"]["seed"], 4);
    assert_eq!(model["model"]["levels"][1]["k"], 1);
    let b = dir.path().join("b");
    ok(&[
        "cluster",
        "--input",
        s(&data),
        "--config",
        s(&config),
        "--k-per-level",
        "2,3",
        "--seed",
        "9",
        "--output-dir",
        s(&b),
    ]);
    let model = json(&b.join("model.json"));
    assert_eq!(model["manifest"]["seed"], 9);
    assert_eq!(
        model["manifest"]["config"]["cluster"]["k_per_level"],
        serde_json::json!([2, 3])
    );

    std::fs::write(&config, "no_such_key: 1\n").unwrap();
    let out = run(&[
        "cluster",
        "--input",
        s(&data),
        "--config",
        s(&config),
        "--output-dir",
        s(&b),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
