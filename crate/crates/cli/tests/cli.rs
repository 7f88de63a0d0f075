use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jetforge"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL: &str = "[jets]\nlambda_sigma = 1\nsigma = 1/8\nr = 1/4\nmu = 8\n\
[grid]\nn_per_axis = 32\nn_t = 9\nell = 1/2\nstore = memory\n\
[output]\ndirectory = out\nformats = pf1\n";

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["--bogus"])), 2);
    assert_eq!(code(&run(d.path(), &["params-check", "--preset", "nope"])), 2);
    assert_eq!(code(&run(d.path(), &["checks", "--names", "nope"])), 2);
}

#[test]
fn decompose_identity_and_domain_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["decompose"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("gamma^2 = 3.75"), "{text}");
    let o = run(d.path(), &["decompose", "--matrix", "1,0,0,1,0,-1"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn tiny_preset_is_reported_infeasible() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["params-check", "--preset", "tiny", "--out", "o"]);
    assert_eq!(code(&o), 3);
    assert!(d.path().join("o/feasibility.csv").exists());
}

#[test]
fn params_search_writes_tables() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["params-search", "--resolution", "3", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let adm = fs::read_to_string(d.path().join("s/admissible.csv")).unwrap();
    assert!(adm.lines().count() > 1);
    assert!(d.path().join("s/binding_histogram.csv").exists());
}

#[test]
fn checks_subset_writes_summary() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &["checks", "--names", "partition_of_unity,antidivergence", "--n", "16", "--out", "c"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let summary = fs::read_to_string(d.path().join("c/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().skip(1).all(|l| l.contains("PASS")));
}

#[test]
fn iterate_dump_then_analyse_and_export() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.ini"), SMALL).unwrap();
    let o = run(d.path(), &["iterate", "--config", "small.ini", "--steps", "1", "--dump-state"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = d.path().join("out");
    assert!(out.join("iteration_0.csv").exists());
    assert!(out.join("state/state.ini").exists());
    assert!(out.join("state/u_008.pf1").exists());

    let o = run(d.path(), &["residual", "--state", "out/state", "--config", "small.ini"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("residual.csv").exists());
    let o = run(d.path(), &["shells", "--state", "out/state", "--config", "small.ini"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("shells.csv").exists());

    let o = run(
        d.path(),
        &["export", "--input", "out/u_final.pf1", "--format", "csv_slice", "--output", "u.csv"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("u.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32 * 32);
}

#[test]
fn missing_state_directory_fails() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["residual", "--state", "absent"]);
    assert_eq!(code(&o), 3);
}
