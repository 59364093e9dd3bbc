use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scaledgd::experiments::fit_loglog_slope;
use scaledgd::io::{read_key_values, read_sweep_csv, read_trajectory_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scaledgd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scaledgd-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Compares against `tests/snapshots/<name>.txt`; `UPDATE_SNAPSHOTS=1` rewrites it.
fn snapshot(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
    assert_eq!(actual, expected, "help text for `{name}` changed; rerun with UPDATE_SNAPSHOTS=1");
}

#[test]
fn help_snapshots() {
    let top = run(&["--help"]);
    assert!(top.status.success());
    snapshot("help", &String::from_utf8(top.stdout).unwrap());
    for sub in ["gen", "run", "sweep", "diag", "rip"] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--threads"), "{sub}");
        snapshot(sub, &text);
    }
}

#[test]
fn conflicting_lambda_is_a_validation_error() {
    let out = run(&["run", "--lambda", "0.1", "--lambda-auto", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot be used with"));
}

#[test]
fn bad_values_exit_two() {
    assert_eq!(run(&["run", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["run", "--algorithm", "sgd"]).status.code(), Some(2));
    assert_eq!(run(&["run", "--algorithm", "gd", "--lambda", "0.1", "--n", "8"]).status.code(), Some(2));
    assert_eq!(run(&["rip", "--n", "5", "--rank", "9"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = scratch("missing");
    let out = run(&["diag", "--instance", dir.join("nope.meta").to_str().unwrap(), "--checkpoints", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_run_diag_round_trip() {
    let dir = scratch("roundtrip");
    let base = dir.join("inst");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    assert!(run(&["gen", "--n", "16", "--kappa", "2", "--seed", "9", "-o", &s(&base)]).status.success());
    let meta = dir.join("inst.meta");
    let traj = dir.join("traj.csv");
    let ck = dir.join("ck.bin");
    let args = [
        "run", "--instance", &s(&meta), "--r", "3", "--alpha", "1e-6", "--target", "1e-6", "--max-iters", "400",
        "--record-every", "10", "--checkpoints", &s(&ck), "--no-timing", "-o", &s(&traj),
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_trajectory_csv(&traj).unwrap();
    assert!(rows.last().unwrap().rel_err_fro.unwrap() <= 1e-6);

    let side = read_key_values(&dir.join("traj.csv.meta")).unwrap();
    let get = |k: &str| side.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone()).unwrap();
    assert!(get("argv").ends_with(&args.join(" ")));
    assert_eq!(get("stop_reason"), "target_reached");

    let first = fs::read(&traj).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(fs::read(&traj).unwrap(), first);

    let diag = dir.join("diag.csv");
    let out = run(&["diag", "--instance", &s(&meta), "--checkpoints", &s(&ck), "-o", &s(&diag)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let replay = read_trajectory_csv(&diag).unwrap();
    assert_eq!(replay.len(), rows.len());
    for (a, b) in replay.iter().zip(&rows) {
        assert_eq!(a.iter, b.iter);
        assert_eq!(a.rel_err_fro, b.rel_err_fro);
        assert!((a.loss - b.loss).abs() <= 1e-12 * b.loss.max(1e-300));
        assert!(a.overparam_norm.is_some());
    }
}

#[test]
fn alpha_sweep_slope_end_to_end() {
    let dir = scratch("alpha");
    let cfg = dir.join("alpha.cfg");
    fs::write(&cfg, "preset = fig-alpha\nn = 20\nvalues = 1e-10, 1e-8, 1e-6\nmax_iters = 2000\ntiming = false\n").unwrap();
    let csv = dir.join("alpha.csv");
    let out = run(&["--threads", "2", "sweep", "--config", cfg.to_str().unwrap(), "-o", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("log-log slope"));
    let records = read_sweep_csv(&csv).unwrap();
    assert_eq!(records.len(), 3);
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.axis_value, r.final_rel_err_fro)).collect();
    let fit = fit_loglog_slope(&points).unwrap();
    assert!((0.7..=1.3).contains(&fit.slope), "slope {}", fit.slope);
}
