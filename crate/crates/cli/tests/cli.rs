use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn case(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pgd-certify-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str], input: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgd-certify"))
        .args(args)
        .arg(input)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn empty_problem_has_no_modes() {
    let out = scratch("empty");
    let o = run(&["solve"], &case("empty.json"), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["m"], 0);
    assert!(out.join("solution.json").exists());
}

#[test]
fn certify_writes_sweep_table() {
    let out = scratch("certify");
    let o = run(&["certify", "--m", "3"], &case("beam1d.json"), &out);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# seed=42");
    assert_eq!(lines[1], "p_1,E2,eta_pgd2,eta_dis2,eta_h2,eta_dt2");
    assert_eq!(lines.len(), 2 + 100);
    let v = stdout_json(&o);
    assert!(v["e_cre"].as_f64().unwrap() > 0.0);
}

#[test]
fn adapt_and_sweep_write_history() {
    for cmd in ["adapt", "sweep"] {
        let out = scratch(cmd);
        let o = run(&[cmd, "--m", "3"], &case("beam1d.json"), &out);
        assert!(o.status.success());
        let csv = std::fs::read_to_string(out.join("history.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("step,action,m,n_elements,n_timesteps,E2_max"));
        assert!(csv.lines().count() >= 3);
    }
}

#[test]
fn goal_table_has_two_parameter_columns() {
    let out = scratch("goal");
    let o = run(&["goal", "--m", "2", "--m-adjoint", "3"], &case("thermal2d.json"), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("goal.csv")).unwrap();
    let header: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(header.len(), 9);
    assert_eq!(csv.lines().count(), 2 + 400);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (scratch("rerun-a"), scratch("rerun-b"));
    for out in [&a, &b] {
        assert!(run(&["adapt", "--m", "4"], &case("beam1d.json"), out).status.success());
    }
    for f in ["history.csv", "sweep.csv", "solution.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_input_reports_json_error() {
    let out = scratch("bad");
    let bad = out.with_extension("json");
    std::fs::write(&bad, r#"{"domain": {"kind": "interval", "length": -1.0, "elements": 4}}"#).unwrap();
    let o = run(&["certify"], &bad, &out);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(v["error"].is_string());
    assert!(v["message"].is_string());

    let o = run(&["certify", "--gamma-tol", "0"], &case("beam1d.json"), &out);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_passes_on_the_beam() {
    let out = scratch("verify");
    let o = run(&["verify", "--m", "3"], &case("beam1d.json"), &out);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
