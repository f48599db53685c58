//! End-to-end tests of the installed binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn unidm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unidm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

#[test]
fn inspect_prints_schema_and_row_count() {
    let output = unidm(&["inspect", fixture("restaurant.csv").to_str().unwrap()]);
    assert!(output.status.success());
    let text = stdout(&output);
    assert!(text.contains("restaurant: 5 attributes, 20 records"), "{text}");
    assert!(text.contains("city (1 missing)"), "{text}");
}

#[test]
fn run_replays_golden_case_with_trace() {
    let output = unidm(&[
        "run",
        "--kind",
        "imputation",
        "--table",
        fixture("restaurant.csv").to_str().unwrap(),
        "--row",
        "19",
        "--attr",
        "city",
        "--mock",
        fixture("case_study_script.jsonl").to_str().unwrap(),
        "--attr-count",
        "2",
        "--trace",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = stdout(&output);
    let golden = std::fs::read_to_string(fixture("golden_final_prompt.txt")).unwrap();
    assert!(text.contains(&golden), "{text}");
    assert!(text.contains("Which attributes are helpful"), "{text}");
    assert!(text.contains("score the relevance"), "{text}");
    assert!(text.contains("convert the items"), "{text}");
    assert!(text.contains("Write the claim as a cloze question."), "{text}");
    assert!(text.contains("answer: beverly hills"), "{text}");
}

#[test]
fn bench_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bench.cfg");
    std::fs::write(
        &config_path,
        format!(
            "# benchmark settings\nattr_count=2\nseed=41\ntables={}\nmock_script={}\n",
            fixture("restaurant.csv").display(),
            fixture("bench_script.jsonl").display()
        ),
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let summary_path = dir.path().join("report.csv");

    let output = unidm(&[
        "bench",
        "--tasks",
        fixture("bench_tasks.jsonl").to_str().unwrap(),
        "--truth",
        fixture("bench_truth.jsonl").to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
        "--summary",
        summary_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["metrics"]["task_count"], 3);
    assert_eq!(report["metrics"]["accuracy"], 1.0);
    assert_eq!(report["seed"], 41);
    let summary = std::fs::read_to_string(&summary_path).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(stdout(&output).contains("accuracy 1.0000"));
}

#[test]
fn cache_stats_and_clear() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");

    let output = unidm(&[
        "run",
        "--kind",
        "imputation",
        "--table",
        fixture("restaurant.csv").to_str().unwrap(),
        "--row",
        "19",
        "--attr",
        "city",
        "--mock",
        fixture("case_study_script.jsonl").to_str().unwrap(),
        "--attr-count",
        "2",
        "--cache",
        cache_path.to_str().unwrap(),
    ]);
    assert!(output.status.success());

    let output = unidm(&["cache", "stats", "--cache", cache_path.to_str().unwrap()]);
    assert!(output.status.success());
    assert!(stdout(&output).contains("6 entries"), "{}", stdout(&output));

    let output = unidm(&["cache", "clear", "--cache", cache_path.to_str().unwrap()]);
    assert!(output.status.success());
    assert!(!cache_path.exists());

    let output = unidm(&["cache", "stats", "--cache", cache_path.to_str().unwrap()]);
    assert!(output.status.success());
    assert!(stdout(&output).contains("0 entries"));
}

#[test]
fn usage_errors_exit_with_status_2() {
    // unknown subcommand (clap)
    let output = unidm(&["explode"]);
    assert_eq!(output.status.code(), Some(2));

    // no backend selected
    let output = unidm(&[
        "run",
        "--kind",
        "imputation",
        "--table",
        fixture("restaurant.csv").to_str().unwrap(),
        "--row",
        "19",
        "--attr",
        "city",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no backend selected"));

    // unknown task kind
    let output = unidm(&[
        "run",
        "--kind",
        "divination",
        "--table",
        fixture("restaurant.csv").to_str().unwrap(),
        "--row",
        "19",
        "--attr",
        "city",
        "--mock",
        fixture("case_study_script.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn task_errors_exit_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let empty_script = dir.path().join("empty.jsonl");
    std::fs::write(&empty_script, "").unwrap();

    let output = unidm(&[
        "run",
        "--kind",
        "imputation",
        "--table",
        fixture("restaurant.csv").to_str().unwrap(),
        "--row",
        "19",
        "--attr",
        "city",
        "--mock",
        empty_script.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}
