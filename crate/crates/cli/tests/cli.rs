use std::path::Path;
use std::process::{Command, Output};

fn emsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emsense")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(emsense(&["no-such-stage"]).status.code(), Some(1));
    assert_eq!(emsense(&["gen-data", "--records", "many"]).status.code(), Some(1));
    assert_eq!(emsense(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est");
    let missing = dir.path().join("nothing");
    let o = emsense(&["estimate", "--data", path(&missing), "--design", path(&missing), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unreachable_rate_exits_two_with_a_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = emsense(&["design-beams", "--min-rate", "40", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let cert = std::fs::read_to_string(dir.path().join("infeasible.txt")).unwrap();
    assert!(!cert.trim().is_empty());
}

#[test]
fn default_design_passes_every_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let o = emsense(&["design-beams", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("feasibility.txt")).unwrap();
    assert!(table.contains("pass") && !table.contains("FAIL"), "{table}");
    for f in ["s_x.chan", "w_s.chan", "w_c.chan", "design.txt", "run.manifest"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn noiseless_estimates_recover_the_channels() {
    let dir = tempfile::tempdir().unwrap();
    let (data, design, est) = (dir.path().join("data"), dir.path().join("design"), dir.path().join("est"));
    assert!(emsense(&["gen-data", "--records", "3", "--points", "8", "--out", path(&data)]).status.success());
    assert!(emsense(&["design-beams", "--out", path(&design)]).status.success());
    let o = emsense(&["estimate", "--noiseless", "--data", path(&data), "--design", path(&design), "--out", path(&est)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(est.join("estimates.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,nmse,error_sq,crb_trace"));
    let rows: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|&n| n < 1e-20), "{rows:?}");
}
