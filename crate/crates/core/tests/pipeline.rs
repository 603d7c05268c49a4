use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use causalgap::pipeline::{run_pipeline, Config, Stage};
use causalgap::report::SummaryRow;

fn small_config() -> Config {
    Config::from_toml(
        r#"
[run]
seed = 5

[simulate]
n = 1200

[forest]
trees = 150
"#,
    )
    .unwrap()
}

fn read_dir(p: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(p)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn report_without_estimates_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.run.stages = vec![Stage::Report];
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.to_string(), "report: no inputs");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config();
    run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    let (ra, rb) = (read_dir(a.path()), read_dir(b.path()));
    assert!(ra.contains_key("summary.csv") && ra.contains_key("ite.csv") && ra.contains_key("run_manifest.toml"));
    assert_eq!(ra.keys().collect::<Vec<_>>(), rb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ra {
        assert!(bytes == &rb[name], "{name} differs");
    }
}

#[test]
fn a_new_seed_changes_the_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small_config();
    cfg.forest.trees = 20;
    run_pipeline(&cfg, a.path()).unwrap();
    cfg.run.seed = 6;
    run_pipeline(&cfg, b.path()).unwrap();
    assert_ne!(read_dir(a.path())["data.csv"], read_dir(b.path())["data.csv"]);
}

#[test]
fn failed_stage_is_named_and_earlier_artifacts_remain() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.forest.honesty_fraction = 1.5;
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().starts_with("forest: "), "{err}");
    let files = read_dir(dir.path());
    for name in ["data.csv", "estimates.csv", "balance.csv", "matches.csv"] {
        assert!(files.contains_key(name), "missing {name}");
    }
    assert!(!files.contains_key("summary.csv"));
}

#[test]
fn report_stage_reads_estimates_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.run.stages = vec![Stage::Simulate, Stage::Ingest, Stage::Ols, Stage::Ps, Stage::Iptw];
    run_pipeline(&cfg, dir.path()).unwrap();
    cfg.run.stages = vec![Stage::Report];
    let s = run_pipeline(&cfg, dir.path()).unwrap();
    let labels: Vec<&str> = s.summary.unwrap().rows.iter().map(SummaryRow::method_label).collect();
    assert_eq!(labels, ["OLS", "IPTW"]);
}

#[test]
fn canonical_run_recovers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&Config::default(), dir.path()).unwrap();
    let table = s.summary.unwrap();
    assert_eq!(table.rows.len(), 7);
    assert!(matches!(table.rows[0], SummaryRow::Unadjusted { .. }));
    for row in &table.rows[1..] {
        assert_eq!(row.within_2se(), Some(true), "{}", row.method_label());
    }
    let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 8);
}

#[test]
fn cli_simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[simulate]\nn = 600\n").unwrap();
    let bin = env!("CARGO_BIN_EXE_causalgap");
    let ok = Command::new(bin).args(["analyze", "--config", cfg.to_str().unwrap(), "--out-dir", out, "--stages", "simulate,ingest,ols,report"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("OLS"));

    let empty = tempfile::tempdir().unwrap();
    let bad = Command::new(bin).args(["report", "--out-dir", empty.path().to_str().unwrap()]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("report: no inputs"));
}

#[test]
fn documented_config_parses() {
    let cfg = Config::from_toml(
        r#"
[run]
seed = 7

[input]
path = "faculty.csv"
salary_floor = 27000

[impute]
keys = ["title", "department"]

[matching]
caliper = 0.2
cluster_pairs = false

[iptw]
truncate_at = 0.99

[forest]
trees = 3000
min_node_size = 5
tune_mtry = false

[sensitivity]
alpha = 0.05
"#,
    )
    .unwrap();
    assert_eq!(cfg.run.seed, 7);
    assert!(!cfg.effective_stages().contains(&Stage::Simulate));
    assert!(Config::from_toml("[forest]\ntress = 3\n").is_err());
}
