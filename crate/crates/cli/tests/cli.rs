use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mose_core::stability;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mose"));
    c.env_remove(mose_cli::config::OUTPUT_DIR_ENV);
    c
}

fn write_config(dir: &Path, editor: &str, n_edits: usize) -> PathBuf {
    let path = dir.join("cfg.json");
    let cfg = serde_json::json!({
        "dims": {"d": 32, "p": 32},
        "memory": {"n_knowledge": 16, "c": 6, "seed": 4},
        "editing": {"editor": editor, "n_edits": n_edits, "stream_seed": 5, "editor_seed": 6},
        "output": {"directory": dir.join("out")}
    });
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn identity_run_is_flat_and_local() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "identity", 20);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in [
        "stability.csv",
        "metrics.json",
        "drift.csv",
        "steps.jsonl",
        "config.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["locality"], 1.0);
    let keys: Vec<&String> = m.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        ["counts", "generalization", "locality", "reliability"]
    );
    let recs = stability::read_csv(fs::File::open(out.join("stability.csv")).unwrap()).unwrap();
    assert_eq!(recs.len(), 21);
    assert!(recs
        .iter()
        .all(|r| r.frob_norm == recs[0].frob_norm && r.deviation == 0.0));
    let lines = fs::read_to_string(out.join("steps.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
}

#[test]
fn missing_field_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    fs::write(
        &path,
        r#"{"dims": {"d": 8, "p": 8}, "memory": {"n_knowledge": 4, "c": 3, "seed": 1},
            "editing": {"editor": "mose", "stream_seed": 1, "editor_seed": 1}}"#,
    )
    .unwrap();
    let o = run(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_edits"), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mose", 5);
    let o = run(&["run", cfg.to_str().unwrap(), "--editing.editor=ridge"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("editing.editor"));
}

#[test]
fn numerical_failure_exits_3_with_step() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mose", 5);
    let o = run(&["run", cfg.to_str().unwrap(), "--editing.lambda=1e308"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("step 1"), "{}", stderr(&o));
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "identity", 3);
    let target = tmp.path().join("from_env");
    let o = bin()
        .args(["run", cfg.to_str().unwrap()])
        .env(mose_cli::config::OUTPUT_DIR_ENV, &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("stability.csv").is_file());
}

fn merged_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn compare_merges_both_editors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mose", 12);
    let o = run(&[
        "compare",
        cfg.to_str().unwrap(),
        "--editors",
        "mose,additive",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let text = fs::read_to_string(out.join("stability.csv")).unwrap();
    assert!(text.starts_with("editor,step,frob_norm,spectral_norm,cond_number,deviation\n"));
    let rows = merged_rows(&out.join("stability.csv"));
    assert_eq!(rows.iter().filter(|r| r[0] == "mose").count(), 13);
    assert_eq!(rows.iter().filter(|r| r[0] == "additive").count(), 13);
    for e in ["mose", "additive"] {
        assert!(out.join(e).join("metrics.json").is_file());
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert_eq!(summary[0]["editor"], "mose");
}

#[test]
fn compare_identity_twice_gives_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "identity", 8);
    let o = run(&[
        "compare",
        cfg.to_str().unwrap(),
        "--editors",
        "identity,identity",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = merged_rows(&tmp.path().join("out/stability.csv"));
    let a: Vec<&[String]> = rows
        .iter()
        .filter(|r| r[0] == "identity_1")
        .map(|r| &r[1..])
        .collect();
    let b: Vec<&[String]> = rows
        .iter()
        .filter(|r| r[0] == "identity_2")
        .map(|r| &r[1..])
        .collect();
    assert_eq!(a.len(), 9);
    assert_eq!(a, b);
}

#[test]
fn compare_needs_two_editors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mose", 3);
    let o = run(&["compare", cfg.to_str().unwrap(), "--editors", "mose"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mose_versus_random_additive_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mose", 500);
    let o = run(&[
        "compare",
        cfg.to_str().unwrap(),
        "--editors",
        "mose,random_additive",
        "--editing.start=orthogonal",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    let ratio = |i: usize| {
        summary[i]["stability"]["cond_number"]["ratio"]
            .as_f64()
            .unwrap()
    };
    assert!((ratio(0) - 1.0).abs() < 1e-6, "mose {}", ratio(0));
    assert!(ratio(1) > 1.0, "random_additive {}", ratio(1));
}

#[test]
fn emitted_csvs_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "additive", 15);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let text = fs::read(out.join("stability.csv")).unwrap();
    let recs = stability::read_csv(text.as_slice()).unwrap();
    let mut again = Vec::new();
    stability::write_csv(&mut again, &recs).unwrap();
    assert_eq!(again, text);

    let drift_text = fs::read_to_string(out.join("drift.csv")).unwrap();
    let rows = mose_core::drift::read_csv(drift_text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 30);
    for (line, row) in drift_text.lines().skip(1).zip(&rows) {
        let fields: Vec<&str> = line.split(',').collect();
        for (f, v) in fields[2..].iter().zip(&row.coords) {
            assert_eq!(stability::fmt_f64(*v), *f);
        }
    }
}

#[test]
fn batch_sequential_regime_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mose", 500);
    let o = run(&[
        "compare",
        cfg.to_str().unwrap(),
        "--editors",
        "mose,additive",
        "--editing.batch_size=10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = merged_rows(&tmp.path().join("out/stability.csv"));
    assert_eq!(rows.iter().filter(|r| r[0] == "mose").count(), 51);
}
