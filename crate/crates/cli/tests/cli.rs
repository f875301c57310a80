use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn redkgr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redkgr"))
        .args(args)
        .env_remove("REDKGR_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Ring of 12 entities: `e_i r0 e_{i+1}` and `e_i r1 e_{i+2}`. Two of the
/// r1 triples are held out for valid and test.
fn toy_dataset(root: &Path) -> PathBuf {
    let dir = root.join("ring");
    fs::create_dir_all(&dir).unwrap();
    let n = 12;
    let mut train = String::new();
    for i in 0..n {
        train.push_str(&format!("e{i}\tr0\te{}\n", (i + 1) % n));
        if i != 3 && i != 7 {
            train.push_str(&format!("e{i}\tr1\te{}\n", (i + 2) % n));
        }
    }
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("valid.txt"), "e3\tr1\te5\n").unwrap();
    fs::write(dir.join("test.txt"), "e7\tr1\te9\n").unwrap();
    dir
}

fn train_toy(tmp: &Path, data: &Path, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = tmp.join(out);
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--max-epochs",
        "2",
        "--set",
        "dim=8",
        "--set",
        "batch_size=5",
        "--set",
        "dropout=0.1",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (redkgr(&args), out)
}

#[test]
fn prepare_writes_index_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let out = tmp.path().join("index");
    let o = redkgr(&["prepare", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("12 entities, 2 relations, 22 facts, 1 valid, 1 test"), "{}", stdout(&o));
    for f in ["entities.txt", "relations.txt", "train.txt", "valid.txt", "test.txt", "index.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["command"], "prepare");
    assert_eq!(run["config"]["stats"]["num_entities"], 12);
    assert!(run["version"].is_string());
}

#[test]
fn relative_data_resolves_under_data_root() {
    let tmp = TempDir::new().unwrap();
    toy_dataset(tmp.path());
    let out = tmp.path().join("index");
    let o = Command::new(env!("CARGO_BIN_EXE_redkgr"))
        .args(["prepare", "--data", "ring", "--out", out.to_str().unwrap()])
        .env("REDKGR_DATA", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_dataset_exits_with_data_code() {
    let tmp = TempDir::new().unwrap();
    let o = redkgr(&["prepare", "--data", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn missing_split_file_is_named() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    fs::remove_file(data.join("test.txt")).unwrap();
    let o = redkgr(&["prepare", "--data", data.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("test.txt"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let (o, _) = train_toy(tmp.path(), &data, "bad", &["--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let (o, _) = train_toy(tmp.path(), &data, "bad", &["--set", "lr"]);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = train_toy(tmp.path(), &data, "bad", &["--set", "fact_fraction=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_explain_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let (o, out) = train_toy(tmp.path(), &data, "run", &["--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["loss"].as_f64().unwrap().is_finite());
        assert!(l["val_mrr"].is_number());
    }
    let checkpoint = out.join("best");
    assert!(checkpoint.join("manifest.json").is_file());
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["command"], "train");
    assert_eq!(run["config"]["train_config"]["seed"], 5);
    assert!(out.join("config.txt").is_file());

    let eval_out = tmp.path().join("eval");
    let o = redkgr(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--per-distance",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = read_json(&eval_out.join("metrics.json"));
    // one test triple, asked in both directions
    assert_eq!(metrics["count"], 2);
    let mrr = metrics["mrr"].as_f64().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);
    let buckets = metrics["per_distance"].as_array().unwrap();
    assert_eq!(buckets.len(), 6);
    let total: u64 = buckets.iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 2);
    let ranks = fs::read_to_string(eval_out.join("ranks.tsv")).unwrap();
    assert!(ranks.lines().nth(1).unwrap().starts_with("e7\tr1\te9\t"));
    assert!(ranks.lines().nth(2).unwrap().starts_with("e9\tr1^-1\te7\t"));

    let dot = tmp.path().join("x.dot");
    let o = redkgr(&[
        "explain",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--triple",
        "e7,r1,e9",
        "--theta",
        "0.01",
        "--out",
        dot.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&dot).unwrap().starts_with("digraph"));
    assert!(tmp.path().join("x.dot.run.json").is_file());

    let o = redkgr(&[
        "explain",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--triple",
        "e9,r1^-1,e7",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let x: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(x["theta"], 0.5);

    let o = redkgr(&[
        "explain",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--triple",
        "e7,r9,e9",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn deterministic_runs_repeat_loss_trace() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let trace = |name: &str| {
        let (o, out) = train_toy(tmp.path(), &data, name, &["--deterministic", "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let run = read_json(&out.join("run.json"));
        assert_eq!(run["threads"], 1);
        fs::read_to_string(out.join("train.log"))
            .unwrap()
            .lines()
            .map(|l| {
                let v: Value = serde_json::from_str(l).unwrap();
                (v["loss"].as_f64().unwrap().to_bits(), v["val_mrr"].as_f64().unwrap().to_bits())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(trace("a"), trace("b"));
}

#[test]
fn selftest_passes_and_rejects_tampered_checkpoint() {
    let small = ["--frontier-cases", "10", "--single-pair-cases", "10", "--gradient-cases", "2"];
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("st");
    let mut args = vec!["selftest", "--out", report.to_str().unwrap()];
    args.extend_from_slice(&small);
    let o = redkgr(&args);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS ")).count(), 4, "{out}");
    assert!(report.join("selftest.json").is_file());
    assert!(report.join("run.json").is_file());

    let data = toy_dataset(tmp.path());
    let (o, run) = train_toy(tmp.path(), &data, "run", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let checkpoint = run.join("best");

    let mut args = vec!["selftest", "--checkpoint", checkpoint.to_str().unwrap()];
    args.extend_from_slice(&small);
    let o = redkgr(&args);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));

    let blob = fs::read_dir(&checkpoint)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "f32"))
        .expect("checkpoint has a blob");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&blob, bytes).unwrap();
    let o = redkgr(&args);
    assert_eq!(o.status.code(), Some(4));
    let out = stdout(&o);
    assert!(out.contains("FAIL single-pair-vs-recursive"), "{out}");
    assert!(out.contains("rejected"), "{out}");
}

#[test]
fn bench_writes_csv() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench");
    let o = redkgr(&[
        "bench",
        "--entities",
        "40,80",
        "--degree",
        "4",
        "--relations",
        "3",
        "--depth",
        "2",
        "--dim",
        "8",
        "--queries",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("num_entities,"));
    assert!(rows[1].starts_with("40,"));
    assert!(rows[2].starts_with("80,"));
}

#[test]
fn zero_threads_is_a_config_error() {
    let o = redkgr(&["--threads", "0", "selftest", "--frontier-cases", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
