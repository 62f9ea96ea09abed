use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qfund::report::RunReport;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn qfund(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfund"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("s.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn equilibrium_to_stdout() {
    let path = scenario("two_citizens_sqrt.toml");
    let out = qfund(&["equilibrium", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = RunReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report.report_version, 1);
    let good = &report.goods[0];
    // a = 1 and 3: c = a²/4, F = (Σa)²/4
    assert!((good.funding.unwrap() - 4.0).abs() < 1e-9);
    let c = good.contributions.as_ref().unwrap();
    assert!((c[0] - 0.25).abs() < 1e-10 && (c[1] - 2.25).abs() < 1e-10);
}

#[test]
fn out_dir_holds_report_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("two_citizens_sqrt.toml");
    let out = qfund(&[
        "scan-q",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--grid",
        "1:3:0.5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("scan_q_park.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "q,hoelder_gap");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[3], "2,0");
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn sweep_limit_exits_3() {
    let path = scenario("log_society.toml");
    let out = qfund(&["equilibrium", "--scenario", path.to_str().unwrap(), "--max-sweeps", "2"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn validation_errors_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "mechanism = \"qf\"\ngoods = [\"g\"]\n\n[[citizens]]\nid = \"a\"\nvalue = { family = \"sqrt\", a = -1.0 }\n",
    );
    let out = qfund(&["optimal", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 6"), "{err}");
}

#[test]
fn parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "mechanism = \n");
    assert_eq!(qfund(&["optimal", "--scenario", &path]).status.code(), Some(2));
}

#[test]
fn missing_file_exits_4() {
    let out = qfund(&["optimal", "--scenario", "/nonexistent/qfund.toml"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn fund_without_contributions_exits_2() {
    let path = scenario("log_society.toml");
    assert_eq!(qfund(&["fund", "--scenario", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_grid_is_rejected() {
    let path = scenario("two_citizens_sqrt.toml");
    let out = qfund(&["scan-q", "--scenario", path.to_str().unwrap(), "--grid", "3:1:0.1"]);
    assert_eq!(out.status.code(), Some(2));
}
