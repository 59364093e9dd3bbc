use std::fs;
use std::path::PathBuf;

use scaledgd::experiments::*;
use scaledgd::io::*;
use scaledgd::*;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scaledgd-it-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn tiny(axis: Axis, values: Vec<f64>) -> SweepSpec {
    let mut spec = preset("ci-small").unwrap();
    spec.problem = ProblemSpec::new(16, 2, 2.0);
    spec.solver.r = 3;
    spec.solver.lambda = LambdaRule::Auto { rank_guess: 2, c_frac: 0.25 };
    spec.solver.alpha = 1e-6;
    spec.solver.max_iters = 300;
    spec.solver.stop = StoppingRule::target(1e-6);
    spec.axis = axis;
    spec.values = values;
    spec.trials = 2;
    spec.gd_tuning = Some(vec![0.2, 0.5]);
    spec.gd_max_iters = 2000;
    spec.timing = false;
    spec
}

#[test]
fn sweep_csv_bytes_are_reproducible() {
    let spec = tiny(Axis::Kappa, vec![1.0, 3.0]);
    let (a, b) = (scratch("det-a.csv"), scratch("det-b.csv"));
    write_sweep_csv(&run_sweep(&spec).unwrap(), &a).unwrap();
    write_sweep_csv(&run_sweep(&spec).unwrap(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn sweep_records_are_ordered_and_parse_back() {
    let spec = tiny(Axis::Kappa, vec![1.0, 3.0]);
    let records = run_sweep(&spec).unwrap();
    let keys: Vec<(f64, usize, Algorithm)> = records.iter().map(|r| (r.axis_value, r.trial, r.algorithm)).collect();
    let mut expect = Vec::new();
    for k in [1.0, 3.0] {
        for t in 0..2 {
            expect.push((k, t, Algorithm::ScaledGdLambda));
            expect.push((k, t, Algorithm::Gd));
        }
    }
    assert_eq!(keys, expect);
    for r in &records {
        assert_eq!(r.iters_to_target.is_none(), r.stop_reason != Outcome::Stopped(StopReason::TargetReached));
    }
    let path = scratch("ordered.csv");
    write_sweep_csv(&records, &path).unwrap();
    assert_eq!(read_sweep_csv(&path).unwrap(), records);
}

#[test]
fn adding_trials_keeps_existing_points() {
    let mut spec = tiny(Axis::Alpha, vec![1e-6, 1e-4]);
    spec.trials = 1;
    let one = run_sweep(&spec).unwrap();
    spec.trials = 2;
    let two = run_sweep(&spec).unwrap();
    assert_eq!(one[0], two[0]);
    assert_eq!(one[1], two[2]);
}

#[test]
fn single_value_sweep_is_one_run() {
    let spec = SweepSpec { trials: 1, ..tiny(Axis::NoiseSigma, vec![0.01]) };
    let recs = run_sweep(&spec).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].algorithm, Algorithm::ScaledGdLambda);
}

#[test]
fn rank_sweep_runs_both_algorithms() {
    let mut spec = tiny(Axis::RankR, vec![2.0, 16.0]);
    spec.trials = 1;
    let recs = run_sweep(&spec).unwrap();
    let algs: Vec<Algorithm> = recs.iter().map(|r| r.algorithm).collect();
    assert_eq!(algs, [Algorithm::ScaledGdLambda, Algorithm::PrecGd, Algorithm::ScaledGdLambda, Algorithm::PrecGd]);
}

#[test]
fn divergent_rates_are_flagged_not_fatal() {
    let mut spec = tiny(Axis::Kappa, vec![2.0]);
    spec.trials = 1;
    spec.gd_tuning = Some(vec![50.0]);
    let recs = run_sweep(&spec).unwrap();
    assert_eq!(recs[1].stop_reason, Outcome::Diverged);
    assert_eq!(recs[1].iters_to_target, None);
}

#[test]
fn axis_mismatch_is_rejected() {
    let spec = tiny(Axis::Kappa, vec![1.0]);
    assert!(sweep_noise(&spec).is_err());
    let bad = SweepSpec { values: vec![2.0, 1.0], ..spec };
    assert!(run_sweep(&bad).is_err());
}

#[test]
fn trajectory_csv_has_one_row_per_record() {
    let inst = ProblemSpec::new(12, 2, 2.0).build(&Seeds::single(1)).unwrap();
    let mut cfg = SolverConfig::new(Algorithm::ScaledGdLambda, 3);
    cfg.record_every = 5;
    cfg.max_iters = 40;
    cfg.diagnostics = true;
    cfg.stop = StoppingRule::patience(1000);
    let traj = inst.run(&cfg).unwrap();
    let path = scratch("traj.csv");
    write_trajectory_csv(&traj, &path, false).unwrap();
    let rows = read_trajectory_csv(&path).unwrap();
    assert_eq!(rows.len(), traj.records.len());
    assert_eq!(rows.iter().map(|r| r.iter).collect::<Vec<_>>(), (0..=40).step_by(5).collect::<Vec<_>>());
    assert_eq!(rows, trajectory_rows(&traj, false));
    assert!(rows.iter().all(|r| r.gamma_norm.is_some() && r.elapsed_ms.is_none()));

    cfg.diagnostics = false;
    let plain = inst.run(&cfg).unwrap();
    write_trajectory_csv(&plain, &path, true).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let second = text.lines().nth(1).unwrap();
    assert_eq!(second.split(',').filter(|f| f.is_empty()).count(), 4);
}

#[test]
fn config_grammar() {
    let spec = parse_sweep_config(
        "# alpha study\npreset = fig-alpha\nvalues = 1e-10, 1e-8\ntrials = 3\nn = 40\ntiming = false\n",
    )
    .unwrap();
    assert_eq!(spec.axis, Axis::Alpha);
    assert_eq!(spec.values, vec![1e-10, 1e-8]);
    assert_eq!(spec.trials, 3);
    assert_eq!(spec.problem.m, 10 * 40 * 3);
    assert!(!spec.timing);
    assert!(parse_sweep_config("bogus = 1").is_err());
    assert!(parse_sweep_config("values = 3, 1").is_err());
    assert!(parse_sweep_config("no equals sign").is_err());
}

#[test]
fn presets_match_declared_setups() {
    let fig1 = preset("paper-fig1").unwrap();
    assert_eq!((fig1.problem.n, fig1.problem.r_star, fig1.problem.m, fig1.solver.r), (150, 3, 4500, 5));
    assert_eq!(fig1.solver.eta, 0.3);
    assert!((fig1.solver.alpha / 1e-27 - 1.0).abs() < 1e-12);
    assert_eq!(fig1.values, (1..=7).map(f64::from).collect::<Vec<_>>());
    let ci = preset("ci-small").unwrap();
    assert_eq!((ci.problem.n, ci.problem.m), (60, 1800));
    let alpha = preset("fig-alpha").unwrap();
    assert_eq!(alpha.values, vec![1e-12, 1e-10, 1e-8, 1e-6]);
    assert_eq!(alpha.solver.stop.patience, Some(100));
    assert!(preset("nope").is_err());
}

#[test]
fn slope_fit_examples() {
    assert!((fit_loglog_slope(&[(1.0, 1.0), (10.0, 10.0)]).unwrap().slope - 1.0).abs() < 1e-15);
    assert_eq!(fit_loglog_slope(&[(1.0, 2.0), (10.0, 2.0)]).unwrap().slope, 0.0);
    assert!((fit_loglog_slope(&[(1.0, 1.0), (2.0, 8.0), (4.0, 64.0)]).unwrap().slope - 3.0).abs() < 1e-12);
    assert!(fit_loglog_slope(&[(1.0, 0.0), (2.0, 1.0)]).is_err());
}

#[test]
fn stored_instance_reproduces_measurements() {
    let spec = ProblemSpec::new(10, 2, 3.0);
    let seeds = Seeds::single(42);
    let built = spec.build(&seeds).unwrap();
    let stored = StoredInstance { spec: spec.clone(), seeds, truth: built.truth.clone() };
    let (meta, _) = write_instance(&stored, &scratch("inst"), MatrixFormat::Binary).unwrap();
    let back = read_instance(&meta).unwrap();
    let rebuilt = back.spec.build(&back.seeds).unwrap();
    assert_eq!(rebuilt.measurements, built.measurements);
    assert_eq!(rebuilt.truth, back.truth);
}

#[test]
fn summary_medians_treat_misses_as_infinite() {
    let rec = |trial, iters: Option<usize>, err| ExperimentRecord {
        axis: Axis::Kappa,
        axis_value: 2.0,
        trial,
        algorithm: Algorithm::Gd,
        iters_to_target: iters,
        final_rel_err_fro: err,
        final_rel_err_op: err,
        stop_reason: match iters {
            Some(_) => Outcome::Stopped(StopReason::TargetReached),
            None => Outcome::Stopped(StopReason::MaxIters),
        },
        wall_ms: None,
    };
    let s = summarize(&[rec(0, Some(10), 1e-9), rec(1, None, 1e-3), rec(2, Some(20), 1e-9)]);
    assert_eq!(s.len(), 1);
    assert_eq!((s[0].trials, s[0].reached, s[0].median_iters), (3, 2, Some(20.0)));
    assert_eq!(s[0].median_rel_err_fro, Some(1e-9));
    let s = summarize(&[rec(0, None, 1.0), rec(1, None, 1.0), rec(2, Some(5), 1e-9)]);
    assert_eq!(s[0].median_iters, None);
}
