use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tgc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgc"))
        .args(args)
        .env("TGC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"data": {"generator": {"n_windows": 200}}, "train": {"epochs": 3}}"#;

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = tgc(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.json", "model.ckpt", "confusion.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["config"]["seed"], 3);
    assert_eq!(metrics["history"].as_array().unwrap().len(), 3);
    assert!(metrics["build"].is_string());
}

#[test]
fn embeddings_export_shape_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let run = dir.path().join("run");
    assert!(tgc(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());
    let ckpt = run.join("model.ckpt");
    let mut texts = Vec::new();
    for name in ["e1", "e2"] {
        let out = dir.path().join(name);
        let o = tgc(&[
            "export-embeddings",
            "--config",
            &cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--split",
            "all",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        texts.push(fs::read_to_string(out.join("embeddings.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let lines: Vec<&str> = texts[0].lines().collect();
    assert_eq!(lines.len(), 200);
    // default model: node_dim 16 + embed_dim 64 + conv 8, then the label
    assert!(lines.iter().all(|l| l.split(',').count() == 16 + 64 + 8 + 1));

    let other = write_config(
        dir.path(),
        "other.json",
        r#"{"data": {"generator": {"n_windows": 200}}, "model": {"dgl": {"iterations": 3}}}"#,
    );
    let o = tgc(&["export-embeddings", "--config", &other, "--checkpoint", ckpt.to_str().unwrap(), "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash mismatch"));
}

#[test]
fn error_paths_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let bad = write_config(dir.path(), "bad.json", r#"{"sede": 1, "loss": {"tau": 2}}"#);
    let o = tgc(&["train", "--config", &bad, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sede") && err.contains("loss.tau"), "{err}");

    let missing = write_config(
        dir.path(),
        "missing.json",
        r#"{"data": {"source": "csv", "csv": {"path": "/definitely/not/here.csv"}}}"#,
    );
    let o = tgc(&["train", "--config", &missing, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("here.csv"));

    let zero_alpha = write_config(dir.path(), "a.json", r#"{"loss": {"alpha": 0}}"#);
    assert_eq!(tgc(&["loss-sweep", "--config", &zero_alpha, "--out", out]).status.code(), Some(2));
}

#[test]
fn generated_csv_trains_through_csv_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.json", SMALL);
    let data = dir.path().join("data");
    let o = tgc(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = data.join("dataset.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# F=4 T=64"));
    assert_eq!(text.lines().count(), 201);

    let csv_cfg = format!(
        r#"{{"data": {{"source": "csv", "csv": {{"path": {:?}}}}}, "train": {{"epochs": 2}}}}"#,
        csv.to_str().unwrap()
    );
    let c2 = write_config(dir.path(), "csv.json", &csv_cfg);
    let o = tgc(&["train", "--config", &c2, "--out", dir.path().join("r").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
