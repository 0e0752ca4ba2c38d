use std::path::PathBuf;
use std::process::{Command, Output};

fn gud(args: &[&str], dir: &PathBuf) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gud")).args(args).arg("--out-dir").arg(dir).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("gud-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn exit_codes() {
    let d = scratch("codes");
    assert_eq!(gud(&["sample", "--bogus"], &d).status.code(), Some(1));
    assert_eq!(gud(&["sample", "--model", "/nonexistent/model.gudnet"], &d).status.code(), Some(2));
    assert_eq!(gud(&["schedule-viz", "--a", "-1"], &d).status.code(), Some(1));
    let help = Command::new(env!("CARGO_BIN_EXE_gud")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn exact_score_nll_on_standard_normal() {
    let d = scratch("nll");
    let out = gud(&["nll", "--data", "synth:normal:4", "--n-data", "4000", "--exact-score", "--seed", "3"], &d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("nll.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let bits: f64 = row[6].parse().unwrap();
    assert!((bits - 2.047).abs() < 0.03, "{bits}");
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn sweep_emits_one_row_per_setting() {
    let d = scratch("sweep");
    let out = gud(
        &["sweep", "--data", "synth:mix2d", "--n-data", "500", "--exact-score", "--a-values", "0.4,1,1.6"],
        &d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn schedule_viz_is_seeded_and_complete() {
    let d = scratch("viz");
    let run = |d: &PathBuf| {
        let out = gud(&["schedule-viz", "--data", "synth:colgauss:4,8", "--schedule", "column", "--b", "0.5"], d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(d.join("schedule.csv")).unwrap()
    };
    let first = run(&d);
    assert_eq!(first, run(&d));
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("t,component_index,gamma,log_snr,beta"));
    std::fs::remove_dir_all(&d).unwrap();
}
