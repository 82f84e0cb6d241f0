mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ergo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergo"))
        .args(args)
        .env("ERGO_PROFILE", "f64")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_line(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap()
}

const SMALL: [&str; 10] = [
    "--set",
    "embed_dim=6",
    "--set",
    "synthetic_leak=2.0",
    "--set",
    "layers=1",
    "--set",
    "heads=2",
    "--set",
    "max_epochs=3",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn param_count_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ergo(&[
        "param-count",
        "--layers",
        "2",
        "--heads",
        "4",
        "--dim",
        "16",
        "--dk",
        "4",
        "--out",
        out,
    ]);
    let text = stdout(&o);
    let rgt = text.lines().find(|l| l.starts_with("rgt")).unwrap();
    assert!(rgt.contains(" 2048 "), "{text}");
    assert!(rgt.ends_with("O(LHD^2)"));
    assert!(text.lines().any(|l| l.starts_with("gcn") && l.ends_with("O(LD^2)")));
    assert_eq!(json_file(&dir.path().join("param_count.json"))["rgt"]["exact"], 2048);
}

#[test]
fn stats_and_graph() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let corpus = common::write_toy_corpus(&corpus_dir, 9, 3, 1);
    let (c, out) = (corpus_dir.to_str().unwrap(), dir.path().join("out"));
    let o = ergo(&["stats", "--corpus", c, "--out", out.to_str().unwrap()]);
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed["documents"], 9);
    assert_eq!(printed["topics"], 3);
    assert_eq!(json_file(&out.join("stats.json")), printed);

    let doc = &corpus.documents()[0];
    let m = doc.events.len();
    let o = ergo(&[
        "make-graph",
        "--doc",
        &doc.doc_id,
        "--corpus",
        c,
        "--out",
        out.to_str().unwrap(),
    ]);
    let graph: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(graph["nodes"].as_array().unwrap().len(), m * (m - 1) / 2);
    assert_eq!(graph["edges"].as_array().unwrap().len(), m * (m - 1) * (m - 2) / 2);
}

#[test]
fn cv_writes_pooled_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    common::write_toy_corpus(&corpus_dir, 14, 7, 2);
    let out = dir.path().join("out");
    let args = with_small(&[
        "cv",
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    let o = ergo(&args);
    let pooled: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let settings: Vec<&str> = pooled
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["setting"].as_str().unwrap())
        .collect();
    assert_eq!(settings, ["intra", "inter", "combined"]);
    for r in pooled.as_array().unwrap() {
        let f1 = r["F1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
    let report = json_file(&out.join("cv_report.json"));
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);
    assert_eq!(report["pooled"], pooled);
    for k in 0..5 {
        assert!(out.join(format!("fold{k}/train_log.jsonl")).exists());
    }
    let csv = std::fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(out.join("predictions.jsonl").exists());
    assert!(out.join("config.cfg").exists());
}

#[test]
fn train_then_inspect_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let corpus = common::write_toy_corpus(&corpus_dir, 14, 7, 3);
    let c = corpus_dir.to_str().unwrap();
    let out = dir.path().join("out");
    let o = ergo(&with_small(&[
        "train",
        "--fold",
        "0",
        "--corpus",
        c,
        "--out",
        out.to_str().unwrap(),
    ]));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["profile"], "f64");
    let ckpt = out.join("best.ckpt");
    assert!(ckpt.exists());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), summary["epochs_run"].as_u64().unwrap() as usize);

    let ck = ckpt.to_str().unwrap();
    let ev = dir.path().join("eval");
    let o = ergo(&[
        "eval",
        "--checkpoint",
        ck,
        "--fold",
        "0",
        "--corpus",
        c,
        "--out",
        ev.to_str().unwrap(),
    ]);
    let reports: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);

    let doc = &corpus.documents()[1];
    let pr = dir.path().join("pred");
    let o = ergo(&[
        "predict",
        "--checkpoint",
        ck,
        "--doc",
        &doc.doc_id,
        "--corpus",
        c,
        "--out",
        pr.to_str().unwrap(),
    ]);
    stdout(&o);
    let preds = pr.join("predictions.jsonl");
    let m = doc.events.len();
    assert_eq!(
        std::fs::read_to_string(&preds).unwrap().lines().count(),
        m * (m - 1) / 2
    );

    let o = ergo(&[
        "hist",
        "--predictions",
        preds.to_str().unwrap(),
        "--out",
        pr.to_str().unwrap(),
    ]);
    let csv = stdout(&o);
    assert!(csv.starts_with("bin_lo,bin_hi,pos_count,neg_count"));
    let bins = json_file(&pr.join("histogram.json"));
    let total: u64 = bins
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["pos_count"].as_u64().unwrap() + b["neg_count"].as_u64().unwrap())
        .sum();
    assert_eq!(total as usize, m * (m - 1) / 2);

    let o = ergo(&[
        "dump-attention",
        "--checkpoint",
        ck,
        "--doc",
        &doc.doc_id,
        "--node",
        "0",
        "--corpus",
        c,
        "--out",
        pr.to_str().unwrap(),
    ]);
    let rows: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let alphas: Vec<f64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["alpha"].as_f64().unwrap())
        .collect();
    assert!((alphas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(alphas.windows(2).all(|w| w[0] >= w[1]));
    let csv = std::fs::read_to_string(pr.join("attention.csv")).unwrap();
    assert!(csv.starts_with("neighbor_a,neighbor_b,alpha\n"));
}

#[test]
fn gridsearch_picks_a_point() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    common::write_toy_corpus(&corpus_dir, 14, 7, 5);
    let out = dir.path().join("out");
    let mut args = with_small(&[
        "gridsearch",
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    args.extend_from_slice(&[
        "--set",
        "grid_layers=1",
        "--set",
        "grid_heads=1,2",
        "--set",
        "grid_dropout=0.1",
        "--set",
        "grid_gamma=0,2",
    ]);
    let report: Value = serde_json::from_str(&stdout(&ergo(&args))).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 4);
    assert!(report["best"].as_u64().unwrap() < 4);
    assert_eq!(json_file(&out.join("gridsearch.json")), report);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ergo(&["stats", "--set", "no_such_key=1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_line(&o);
    assert_eq!(e["error"], "config");
    assert_eq!(e["code"], 2);

    let o = ergo(&[
        "stats",
        "--corpus",
        dir.path().join("missing").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "data");

    let o = ergo(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["code"], 2);

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "layers = 2\nlayers = 3\n").unwrap();
    let o = ergo(&["stats", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_ergo"))
        .args([
            "param-count",
            "--layers",
            "1",
            "--heads",
            "1",
            "--dim",
            "4",
            "--out",
            out.to_str().unwrap(),
        ])
        .env("ERGO_PROFILE", "f16")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
