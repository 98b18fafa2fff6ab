use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pii-forge"));
    c.env_remove("PII_FORGE_SEED");
    c
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bio20")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pii-forge")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn approx_eq(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let kx: Vec<_> = x.keys().collect();
            let ky: Vec<_> = y.keys().collect();
            assert_eq!(kx, ky, "keys differ at {path}");
            for k in x.keys() {
                approx_eq(&x[k], &y[k], &format!("{path}.{k}"));
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() < 1e-12, "{path}: {x} vs {y}");
        }
        _ => assert_eq!(a, b, "at {path}"),
    }
}

#[test]
fn fixture_regenerates_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--pages", "20", "--seed", "2020", "--out", s(dir.path())]);
    let fx = fixture();
    assert_eq!(fs::read(dir.path().join("gold.conll")).unwrap(), fs::read(fx.join("gold.conll")).unwrap());
    let mut names: Vec<_> = fs::read_dir(fx.join("pages")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 20);
    for n in names {
        let a = fs::read(dir.path().join("pages").join(&n)).unwrap();
        let b = fs::read(fx.join("pages").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn end_to_end_pipeline_matches_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = fixture();
    let (pages, gold) = (fx.join("pages"), fx.join("gold.conll"));
    let (rec, auto, ev) = (d.join("rec.jsonl"), d.join("auto.conll"), d.join("ev.json"));

    let out = ok(&["infobox", "--pages", s(&pages), "--out", s(&rec)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["records"], 20);
    assert_eq!(fs::read_to_string(&rec).unwrap().lines().count(), 20);

    let stats_path = d.join("stats.json");
    let out = ok(&[
        "annotate", "--pages", s(&pages), "--records", s(&rec), "--out", s(&auto), "--keep-empty", "--stats", s(&stats_path),
    ]);
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["pages"], 20);
    assert_eq!(stats, serde_json::from_str::<Value>(&fs::read_to_string(&stats_path).unwrap()).unwrap());

    let out = ok(&["evaluate", "--pred", s(&auto), "--gold", s(&gold), "--json", s(&ev)]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("             strict    exact     type  partial"));
    let got: Value = serde_json::from_str(&fs::read_to_string(&ev).unwrap()).unwrap();
    let want: Value = serde_json::from_str(&fs::read_to_string(fx.join("expected_annotation_eval.json")).unwrap()).unwrap();
    approx_eq(&got, &want, "report");
    let strict = got["strict"]["micro"]["f1"].as_f64().unwrap();
    let partial = got["partial"]["micro"]["f1"].as_f64().unwrap();
    assert!(strict < partial);
}

#[test]
fn train_tag_evaluate_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gold = fixture().join("gold.conll");
    let (model, pred, loss) = (d.join("m.bin"), d.join("pred.conll"), d.join("loss.csv"));
    ok(&["train", "--corpus", s(&gold), "--model-out", s(&model), "--loss-log", s(&loss), "--feature-bits", "14", "--epochs", "3"]);
    let csv = fs::read_to_string(&loss).unwrap();
    assert!(csv.starts_with("step,worker_id,loss\n"));
    assert!(csv.lines().count() > 1);
    ok(&["tag", "--model", s(&model), "--corpus", s(&gold), "--out", s(&pred)]);
    ok(&["evaluate", "--pred", s(&pred), "--gold", s(&gold)]);

    let out = ok(&["split", "--corpus", s(&gold), "--out-dir", s(d), "--ratios", "0.5,0.25,0.25", "--seed", "3"]);
    let sizes: Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: u64 = sizes.as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 133);
    assert_eq!(sizes.as_object().unwrap().len(), 3);
}

#[test]
fn fedtrain_writes_report_and_loss_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gold = fixture().join("gold.conll");
    let (report, loss) = (d.join("r.json"), d.join("l.csv"));
    ok(&[
        "fedtrain", "--train", s(&gold), "--test", s(&gold), "--scenario", "fed-remote", "--workers", "2",
        "--compress", "8", "--feature-bits", "14", "--report", s(&report), "--loss-log", s(&loss),
    ]);
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for scheme in ["strict", "exact", "type", "partial"] {
        assert!(r[scheme]["micro"]["f1"].is_number());
    }
    let csv = fs::read_to_string(&loss).unwrap();
    let workers: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(workers.into_iter().collect::<Vec<_>>(), ["0", "1"]);

    // compression is only meaningful when models move between machines
    let out = run(&["fedtrain", "--train", s(&gold), "--test", s(&gold), "--scenario", "central", "--compress", "8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["stats"]).status.code(), Some(1));
    assert_eq!(run(&["fedtrain", "--train", "a", "--test", "b", "--compress", "4"]).status.code(), Some(1));
    assert_eq!(run(&["stats", "--corpus", "/nonexistent/x.conll"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conll");
    fs::write(&bad, "John B-PER\n").unwrap();
    let out = run(&["stats", "--corpus", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn config_file_overlays_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[synth]\npages = 3\nseed = 11\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = ok(&["--config", s(&cfg), "synth", "--out", s(&out_dir), "--seed", "12"]);
    let resolved: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(resolved["command"]["synth"]["pages"], 3);
    assert_eq!(resolved["command"]["synth"]["seed"], 12);
    assert_eq!(fs::read_dir(out_dir.join("pages")).unwrap().count(), 3);

    fs::write(&cfg, "pages = 3\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "synth", "--out", s(&out_dir)]).status.code(), Some(1));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("PII_FORGE_SEED", "77")
        .args(["synth", "--pages", "1", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert!(out.status.success());
    let resolved: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(resolved["command"]["synth"]["seed"], 77);
}

#[test]
fn export_gold_replays_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gold = fixture().join("gold.conll");
    let text = fs::read_to_string(&gold).unwrap();
    let first_id = text.lines().find_map(|l| l.strip_prefix("#sentence=")).unwrap().to_string();
    let log = d.join("log.jsonl");
    let line = serde_json::json!({
        "decision_id": 0, "sentence_id": first_id, "action": "CONFIRM", "target": null,
        "span": null, "annotator": "t", "timestamp": "2026-01-01T00:00:00Z"
    });
    fs::write(&log, format!("{line}\n")).unwrap();
    let out_path = d.join("g.conll");
    let out = ok(&["export-gold", "--corpus", s(&gold), "--log", s(&log), "--out", s(&out_path), "--only-done"]);
    let progress: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(progress["done"], 1);
    let exported = fs::read_to_string(&out_path).unwrap();
    assert_eq!(exported.matches("#sentence=").count(), 1);
}
