use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_telesee"));
    c.env_remove("TELESEE_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, n: usize, name: &str) {
    ok(dir, &["dataset", "synth", "--n", &n.to_string(), "--seed", "3", "--out", name]);
}

// f64 so that stage losses add up to the total within 1e-9
const TINY: &[&str] = &["--precision", "f64", "--epochs", "1", "--d-model", "16", "--heads", "2", "--layers", "1", "--ffn-dim", "16", "--seed", "1", "--warmup", "1"];

fn train(dir: &Path, data: &str, out: &str, system: &str) {
    let mut args = vec!["train", "--data", data, "--out", out, "--system", system];
    args.extend_from_slice(TINY);
    ok(dir, &args);
}

#[test]
fn eval_identity_scores_one_in_every_mode() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 12, "g.jsonl");
    ok(d.path(), &["eval", "--pred", "g.jsonl", "--ref", "g.jsonl", "--mode", "all", "--out", "r.json", "--per-attribute", "pa.csv"]);
    let r = json(d.path().join("r.json"));
    for m in ["exact", "approx", "multiprop"] {
        assert_eq!(r["scores"][m].as_f64(), Some(1.0), "{m}");
    }
    assert_eq!(r["reports"][0]["documents"].as_array().unwrap().len(), 12);
    let pa = std::fs::read_to_string(d.path().join("pa.csv")).unwrap();
    assert!(pa.starts_with("key,score\n"));
    assert!(pa.lines().skip(1).all(|l| l.ends_with(",1.000000")));
    let m = json(d.path().join("r.json.manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn single_mode_and_name_weight() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 3, "g.jsonl");
    ok(d.path(), &["eval", "--pred", "g.jsonl", "--ref", "g.jsonl", "--mode", "multiprop", "--name-weight", "0.7", "--pooling", "pooled", "--out", "r.json"]);
    let r = json(d.path().join("r.json"));
    assert_eq!(r["scores"].as_object().unwrap().len(), 1);
    assert_eq!(r["reports"][0]["mode"]["name_weight"].as_f64(), Some(0.7));
    let bad = run(d.path(), &["eval", "--pred", "g.jsonl", "--ref", "g.jsonl", "--name-weight", "1.5", "--out", "r.json"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn missing_schema_is_usage_error_naming_flag() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 2, "g.jsonl");
    let o = run(d.path(), &["dataset", "validate", "--in", "g.jsonl", "--schema", "nope.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--schema"), "{}", stderr(&o));
    let o = run(d.path(), &["dataset", "validate", "--in", "g.jsonl", "--bogus"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_key_is_validation_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("bad.jsonl"),
        r#"{"doc_id":"a","text":"x is fast","entities":[{"name":"x","type":"6G-related technique","attributes":{"Speed":"fast"}}]}"#,
    )
    .unwrap();
    let o = run(d.path(), &["dataset", "validate", "--in", "bad.jsonl"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("Speed") && stderr(&o).contains("doc a"), "{}", stderr(&o));
}

#[test]
fn seed_falls_back_to_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["dataset", "synth", "--n", "2", "--out", "a.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("TELESEE_SEED"));
    let o = bin().current_dir(d.path()).env("TELESEE_SEED", "3").args(["dataset", "synth", "--n", "2", "--out", "b.jsonl"]).output().unwrap();
    assert!(o.status.success());
    synth(d.path(), 2, "c.jsonl");
    assert_eq!(std::fs::read(d.path().join("b.jsonl")).unwrap(), std::fs::read(d.path().join("c.jsonl")).unwrap());
}

#[test]
fn split_and_stats() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 10, "g.jsonl");
    ok(d.path(), &["dataset", "split", "--in", "g.jsonl", "--ratios", "0.8,0.1,0.1", "--seed", "7", "--out-prefix", "run"]);
    let lines = |f: &str| std::fs::read_to_string(d.path().join(f)).unwrap().lines().count();
    assert_eq!((lines("run.train.jsonl"), lines("run.dev.jsonl"), lines("run.test.jsonl")), (8, 1, 1));
    let o = run(d.path(), &["dataset", "split", "--in", "g.jsonl", "--ratios", "0.5,0.1,0.1", "--seed", "7", "--out-prefix", "x"]);
    assert_eq!(code(&o), 2);

    ok(d.path(), &["dataset", "stats", "--in", "g.jsonl", "--out", "s.json"]);
    let s = json(d.path().join("s.json"));
    assert_eq!(s["documents"], 10);
    assert_eq!(s["reference_sentences"], 2390);
    assert!(s["words"].as_u64().unwrap() > 0);
}

#[test]
fn schema_compile_round_trips() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("s.json"), r#"{"version":"v2","entity_types":["Protocol"],"attribute_keys":["Layer","Year"]}"#).unwrap();
    ok(d.path(), &["schema", "compile", "--in", "s.json", "--out", "c.json"]);
    let c = json(d.path().join("c.json"));
    assert_eq!(c["attribute_keys"][1]["token"], "attr_year");
    // compiled registries are accepted wherever a schema is
    std::fs::write(d.path().join("g.jsonl"), r#"{"doc_id":"a","text":"TCP","entities":[{"name":"TCP","type":"protocol","attributes":{"layer":"4"}}]}"#).unwrap();
    ok(d.path(), &["dataset", "validate", "--in", "g.jsonl", "--schema", "c.json"]);
    std::fs::write(d.path().join("dup.json"), r#"{"version":"v","entity_types":["T"],"attribute_keys":["A/B","A B"]}"#).unwrap();
    assert_eq!(code(&run(d.path(), &["schema", "compile", "--in", "dup.json", "--out", "x.json"])), 3);
}

#[test]
fn train_extract_bench_report() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, 8, "g.jsonl");
    let before = std::fs::read(p.join("g.jsonl")).unwrap();
    train(p, "g.jsonl", "ts.ckpt", "telesee");
    train(p, "g.jsonl", "ts2.ckpt", "telesee");
    assert_eq!(std::fs::read(p.join("ts.ckpt")).unwrap(), std::fs::read(p.join("ts2.ckpt")).unwrap());
    train(p, "g.jsonl", "lm.ckpt", "lm-json");
    let log = json(p.join("ts.ckpt.train.json"));
    let ep = &log["epochs"][0];
    let parts: f64 = ep["per_stage"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((parts - ep["total"].as_f64().unwrap()).abs() <= 1e-9);

    ok(p, &["extract", "--model", "ts.ckpt", "--in", "g.jsonl", "--out", "par.jsonl", "--jobs", "2", "--trace", "t.jsonl"]);
    ok(p, &["extract", "--model", "ts.ckpt", "--in", "g.jsonl", "--out", "seq.jsonl", "--sequential"]);
    assert_eq!(std::fs::read(p.join("par.jsonl")).unwrap(), std::fs::read(p.join("seq.jsonl")).unwrap());
    let t = std::fs::read_to_string(p.join("t.jsonl")).unwrap();
    assert!(t.lines().all(|l| serde_json::from_str::<Value>(l).unwrap()["encoder_calls"] == 1));
    ok(p, &["extract", "--model", "lm.ckpt", "--in", "g.jsonl", "--out", "lm.jsonl"]);

    ok(p, &["bench", "--system", "telesee", "--model", "ts.ckpt", "--in", "g.jsonl", "--reps", "1", "--out", "a.json"]);
    ok(p, &["bench", "--system", "lm-json", "--model", "lm.ckpt", "--in", "g.jsonl", "--reps", "1", "--out", "b.json"]);
    let b = json(p.join("a.json"));
    assert!(b["bench"]["samples_per_sec"].as_f64().unwrap() > 0.0);
    assert_eq!(b["scores"].as_array().unwrap().len(), 3);
    let wrong = run(p, &["bench", "--system", "lm-json", "--model", "ts.ckpt", "--in", "g.jsonl", "--reps", "1", "--out", "c.json"]);
    assert_eq!(code(&wrong), 3);

    ok(p, &["report", "--bench", "a.json", "b.json", "--out", "fig.csv"]);
    let fig = std::fs::read_to_string(p.join("fig.csv")).unwrap();
    let mut rows = fig.lines();
    assert!(rows.next().unwrap().starts_with("system,batching,samples_per_sec,"));
    assert_eq!(rows.count(), 2);
    let corr = std::fs::read_to_string(p.join("fig_correlation.csv")).unwrap();
    assert!(corr.starts_with("pair,systems,pearson,spearman"));
    assert_eq!(std::fs::read(p.join("g.jsonl")).unwrap(), before);
}

#[test]
fn extract_rejects_other_schema_version() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, 3, "g.jsonl");
    train(p, "g.jsonl", "m.ckpt", "telesee");
    let def = r#"{"version":"other","entity_types":["6G-related technique"],"attribute_keys":["Benefits"]}"#;
    std::fs::write(p.join("s.json"), def).unwrap();
    let o = run(p, &["extract", "--model", "m.ckpt", "--schema", "s.json", "--in", "g.jsonl", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("schema version"));
    let o = run(p, &["extract", "--model", "missing.ckpt", "--in", "g.jsonl", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--model"));
}

#[test]
fn config_file_with_flag_override() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, 3, "g.jsonl");
    let cfg = r#"{"seed": 5, "data": "g.jsonl", "checkpoint": "m.ckpt", "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_dim": 16}, "train": {"epochs": 1, "lr": 0.001}}"#;
    std::fs::write(p.join("run.json"), cfg).unwrap();
    ok(p, &["train", "--config", "run.json", "--epochs", "2"]);
    let log = json(p.join("m.ckpt.train.json"));
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(log["model"]["d_model"], 16);
    let m = json(p.join("m.ckpt.manifest.json"));
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(m["config"]["train"]["optimizer"]["lr"].as_f64(), Some(0.001));
    std::fs::write(p.join("bad.json"), r#"{"epochs": 3}"#).unwrap();
    assert_eq!(code(&run(p, &["train", "--config", "bad.json"])), 2);
}

#[test]
fn report_inputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &["report", "--out", "x.csv"])), 2);

    synth(p, 6, "g.jsonl");
    ok(p, &["eval", "--pred", "g.jsonl", "--ref", "g.jsonl", "--out", "one.json", "--system", "a"]);
    ok(p, &["report", "--eval", "one.json", "--out", "s.csv"]);
    let radar = std::fs::read_to_string(p.join("s_radar.csv")).unwrap();
    let keys: Vec<&str> = radar.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    let mut dedup = keys.clone();
    dedup.dedup();
    assert_eq!(keys, dedup);
    assert!(keys.contains(&"Benefits"));
    assert!(!p.join("s_correlation.csv").exists());

    // a second system with half the predictions removed
    let text = std::fs::read_to_string(p.join("g.jsonl")).unwrap();
    let half: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if i % 2 == 0 {
                v["entities"] = Value::Array(vec![]);
            }
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(p.join("half.jsonl"), half).unwrap();
    ok(p, &["eval", "--pred", "half.jsonl", "--ref", "g.jsonl", "--out", "two.json", "--system", "b"]);
    ok(p, &["report", "--eval", "one.json", "two.json", "--out", "s.csv"]);
    let scores = std::fs::read_to_string(p.join("s.csv")).unwrap();
    assert_eq!(scores.lines().count(), 3);
    let corr = std::fs::read_to_string(p.join("s_correlation.csv")).unwrap();
    assert!(corr.lines().nth(1).unwrap().starts_with("multiprop-exact,2,1.000000,1.000000,false"), "{corr}");

    let mut other = json(p.join("two.json"));
    other["schema_version"] = Value::from("6gtech-2");
    std::fs::write(p.join("three.json"), other.to_string()).unwrap();
    let o = run(p, &["report", "--eval", "one.json", "three.json", "--out", "s.csv"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("mixed schema versions"));
}
