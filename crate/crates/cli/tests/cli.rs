use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evolve-gnn"))
        .args(args)
        .current_dir(dir)
        .env_remove("EVOLVE_GNN_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_dataset(dir: &Path) {
    stdout(&cli(&["synth", "--out", "ds", "--n-nodes", "400", "--seed", "3"], dir));
}

#[test]
fn analyze_prints_three_tables() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let text = stdout(&cli(&["analyze", "--data", "ds", "--k", "2"], tmp.path()));
    let tables: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(tables.len(), 3);
    assert!(tables[0].starts_with("k,delta,count\n"));
    assert!(tables[1].starts_with("k,p25,p50,p75,p100\n2,"));
    assert!(tables[2].starts_with("t,sigma\n"));
    assert_eq!(tables[2].lines().count(), 10, "header plus one line per year after the first");
}

#[test]
fn analyze_writes_files_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    stdout(&cli(&["analyze", "--data", "ds", "--out", "stats"], tmp.path()));
    let pct = fs::read_to_string(tmp.path().join("stats/percentiles.csv")).unwrap();
    assert_eq!(pct.lines().count(), 4);
    assert!(tmp.path().join("stats/delta.csv").is_file());
    assert!(tmp.path().join("stats/drift.csv").is_file());
}

#[test]
fn describe_and_run_agree_on_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let tasks = stdout(&cli(&["tasks", "describe", "--data", "ds", "--history", "2"], tmp.path()));
    let n_tasks = tasks.lines().count() - 1;
    assert!(n_tasks >= 2);
    let run = stdout(&cli(
        &["run", "--data", "ds", "--model", "sgc", "--history", "2", "--steps", "5"],
        tmp.path(),
    ));
    let mut lines = run.lines();
    assert!(lines.next().unwrap().starts_with("t,accuracy,n_test,n_correct"));
    assert_eq!(lines.count(), n_tasks);
}

#[test]
fn grid_outputs_are_versioned_and_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{"dataset": {"synthetic": {"n_nodes": 300}}, "models": ["sgc"], "histories": [1],
        "seeds": [0, 1], "steps_per_task": 3, "output_dir": "out"}"#;
    fs::write(tmp.path().join("grid.json"), config).unwrap();
    let first = stdout(&cli(&["grid", "grid.json", "--report"], tmp.path()));
    let dir = tmp.path().join(first.lines().next().unwrap());
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("summary.csv").is_file());
    assert!(dir.join("accuracy_h1.svg").is_file());
    let results = fs::read(dir.join("results.csv")).unwrap();
    let second = stdout(&cli(&["grid", "grid.json"], tmp.path()));
    assert_eq!(first.lines().next(), second.lines().next());
    assert_eq!(fs::read(dir.join("results.csv")).unwrap(), results);
    assert_eq!(fs::read_dir(dir.join("runs")).unwrap().count(), 4);
}

#[test]
fn invalid_grid_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{"dataset": {"synthetic": {}}, "models": ["mlp"], "histories": [1], "seeds": [], "output_dir": "out"}"#;
    fs::write(tmp.path().join("grid.json"), config).unwrap();
    let out = cli(&["grid", "grid.json"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed list is empty"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn adapt_lists_missing_archive_files() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("archive")).unwrap();
    fs::write(tmp.path().join("archive/X.npy"), b"").unwrap();
    let out = cli(&["adapt", "archive", "--out", "canon"], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for f in ["y.npy", "t.npy", "adjlist.txt"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn missing_data_source_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--model", "mlp"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
