use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/selection.csv")
}

fn qselect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qselect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn qselect_threads(threads: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qselect"))
        .env("QSELECT_THREADS", threads)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn test1_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let input = fixture();
    let o = qselect(&[
        "test1",
        "--input",
        input.to_str().unwrap(),
        "--x",
        "x",
        "--zc",
        "z",
        "--oracle-p",
        "p",
        "--tau",
        "0.1:0.9:0.1",
        "--R",
        "40",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["per_tau"].as_array().unwrap().len(), 9);
    assert_eq!(v["boot_draws"].as_array().unwrap().len(), 40);
    assert!(v["config_echo"]["h_x_used"].is_array());
}

#[test]
fn thin_window_exits_with_two() {
    let input = fixture();
    let o = qselect(&[
        "test2",
        "--input",
        input.to_str().unwrap(),
        "--x",
        "x",
        "--zc",
        "z",
        "--oracle-p",
        "p",
        "--delta",
        "0.999",
        "--h-p",
        "0.0005",
        "--R",
        "20",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("thin set"));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "y,s,x,z\n1,1,0.1,0.2\n1,2,0.3,0.4\n").unwrap();
    let o = qselect(&["test1", "--input", csv.to_str().unwrap(), "--x", "x", "--zc", "z"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(qselect(&["simulate", "--reps", "5"]).status.code(), Some(1));
    assert_eq!(qselect(&["bogus"]).status.code(), Some(1));
    assert_eq!(qselect(&["--help"]).status.code(), Some(0));
}

#[test]
fn text_report_has_table_rows() {
    let input = fixture();
    let o = qselect(&[
        "meantest",
        "--input",
        input.to_str().unwrap(),
        "--x",
        "x",
        "--zc",
        "z",
        "--oracle-p",
        "p",
        "--R",
        "30",
        "--format",
        "text",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let t = String::from_utf8(o.stdout).unwrap();
    for row in ["Statistic", "90%-CV", "95%-CV", "P-Value", "# obs"] {
        assert!(t.contains(row), "{row} missing:\n{t}");
    }
}

#[test]
fn replicate_is_byte_identical_across_runs_and_threads() {
    let args = [
        "replicate", "--table", "S1-caseI", "--scale", "0.03", "--n", "200,300", "--columns", "0,7", "--seed", "7",
    ];
    let a = qselect_threads("1", &args);
    let b = qselect_threads("1", &args);
    let c = qselect_threads("3", &args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn simulate_is_byte_identical_across_threads() {
    let args = ["simulate", "--test", "test1", "--n", "300", "--reps", "6", "--seed", "3", "--format", "csv"];
    let a = qselect_threads("1", &args);
    let b = qselect_threads("4", &args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 7);
}
