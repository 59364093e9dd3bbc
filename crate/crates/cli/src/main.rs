use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scaledgd::experiments::{
    fit_loglog_slope, minimax_reference, parse_sweep_config, preset, run_sweep, summarize, Axis,
    ProblemSpec, Seeds, SweepSpec,
};
use scaledgd::io::{
    read_checkpoints, read_instance, write_checkpoints, write_instance,
    write_key_values, write_sweep_csv, write_trajectory_csv, write_trajectory_rows, MatrixFormat,
    StoredInstance, TrajectoryRow,
};
use scaledgd::solver::DEFAULT_C_FRAC;
use scaledgd::*;

#[derive(Parser, Debug)]
#[command(name = "scaledgd", version, about = "Low-rank matrix sensing with ScaledGD(lambda) and baselines")]
struct Cli {
    /// Worker threads for operator reductions (results do not depend on it; 0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a problem instance (metadata file plus U* matrix)
    Gen(GenArgs),
    /// Run one solver and write its trajectory
    Run(RunArgs),
    /// Run a parameter sweep and write one CSV row per run
    Sweep(SweepArgs),
    /// Replay saved checkpoints into per-iterate diagnostics
    Diag(DiagArgs),
    /// Estimate the restricted isometry constant of a Gaussian operator
    Rip(RipArgs),
}

/// Problem overrides shared by `gen` and `run`; unset fields come from the preset.
#[derive(Args, Debug)]
struct ProblemArgs {
    /// Preset supplying defaults (ci-small, paper-fig1, fig-alpha, fig-r, fig-noisy)
    #[arg(long, default_value = "ci-small")]
    preset: String,
    /// Ambient dimension n [default: from preset]
    #[arg(long)]
    n: Option<usize>,
    /// True rank r* [default: from preset]
    #[arg(long)]
    r_star: Option<usize>,
    /// Condition number of X* [default: from preset]
    #[arg(long)]
    kappa: Option<f64>,
    /// Spacing of the true singular values: linear or geometric [default: from preset]
    #[arg(long)]
    spectrum: Option<Spectrum>,
    /// Number of measurements [default: 10 n r*]
    #[arg(long)]
    m: Option<usize>,
    /// Operator storage: dense or streamed [default: from preset]
    #[arg(long)]
    backend: Option<Backend>,
    /// Measurement noise standard deviation [default: from preset]
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Master seed [default: the preset's]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Output base path; writes <output>.meta and <output>.bin or .txt
    #[arg(long, short)]
    output: PathBuf,
    /// Matrix file format: binary or text
    #[arg(long, default_value = "binary")]
    format: MatrixFormat,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Load the problem from an instance metadata file written by `gen`
    #[arg(long, conflicts_with_all = ["n", "r_star", "kappa", "spectrum", "m", "backend", "noise_sigma", "seed"])]
    instance: Option<PathBuf>,
    /// scaled-gd-lambda, gd, scaled-gd or prec-gd
    #[arg(long, default_value = "scaled-gd-lambda")]
    algorithm: Algorithm,
    /// Factor rank r [default: from preset]
    #[arg(long)]
    r: Option<usize>,
    /// Learning rate [default: from preset]
    #[arg(long)]
    eta: Option<f64>,
    /// Fixed damping for scaled-gd-lambda
    #[arg(long)]
    lambda: Option<f64>,
    /// Estimate the damping from the data with this rank guess [default: from preset]
    #[arg(long, conflicts_with = "lambda")]
    lambda_auto: Option<usize>,
    /// Initialization scale [default: from preset]
    #[arg(long)]
    alpha: Option<f64>,
    /// small-random or spectral [default: spectral for prec-gd, small-random otherwise]
    #[arg(long)]
    init: Option<InitArg>,
    /// Iteration cap [default: from preset]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop at this relative Frobenius error [default: from preset]
    #[arg(long)]
    target: Option<f64>,
    /// Stop after this many iterations without relative loss progress [default: from preset]
    #[arg(long)]
    patience: Option<usize>,
    /// Record every k-th iterate
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Add phase diagnostics to the trajectory
    #[arg(long)]
    diagnostics: bool,
    /// Save recorded iterates to this file for `diag`
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Leave the elapsed_ms column empty so output is byte-reproducible
    #[arg(long)]
    no_timing: bool,
    /// Trajectory CSV path
    #[arg(long, short, default_value = "trajectory.csv")]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum InitArg {
    SmallRandom,
    Spectral,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Preset to run (ci-small, paper-fig1, fig-alpha, fig-r, fig-noisy)
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Sweep configuration file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trials per point [default: from preset or config]
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed [default: from preset or config]
    #[arg(long)]
    seed: Option<u64>,
    /// Leave the wall_ms column empty so output is byte-reproducible
    #[arg(long)]
    no_timing: bool,
    /// Sweep CSV path
    #[arg(long, short, default_value = "sweep.csv")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct DiagArgs {
    /// Instance metadata file the checkpoints were produced on
    #[arg(long)]
    instance: PathBuf,
    /// Checkpoint file written by `run --checkpoints`
    #[arg(long)]
    checkpoints: PathBuf,
    /// Damping used for the sigma_min_scaled column
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Diagnostics CSV path
    #[arg(long, short, default_value = "diagnostics.csv")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct RipArgs {
    /// Ambient dimension
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Number of measurements
    #[arg(long, default_value_t = 4800)]
    m: usize,
    /// Rank of the test matrices
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// Random test matrices
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Operator storage: dense or streamed
    #[arg(long, default_value = "dense")]
    backend: Backend,
    /// Use the identity operator instead of a Gaussian one
    #[arg(long)]
    identity: bool,
    /// Seed for the operator and the test matrices
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a, &argv),
        Command::Sweep(a) => cmd_sweep(a, &argv),
        Command::Diag(a) => cmd_diag(a, &argv),
        Command::Rip(a) => cmd_rip(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let validation = matches!(e, Error::InvalidArgument(_) | Error::Parse { .. } | Error::MemoryCap { .. });
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

/// Preset spec with the problem overrides applied, plus the seeds to use.
///
/// Without `--seed`, a value that matches one of the preset's sweep points
/// reuses that point's seeds, so a single run reproduces the sweep.
fn resolve_problem(a: &ProblemArgs) -> Result<(SweepSpec, ProblemSpec, Seeds)> {
    let spec = preset(&a.preset)?;
    let mut p = spec.problem.clone();
    if let Some(v) = a.n {
        p.n = v;
    }
    if let Some(v) = a.r_star {
        p.r_star = v;
    }
    if let Some(v) = a.kappa {
        p.kappa = v;
    }
    if let Some(v) = a.spectrum {
        p.spectrum = v;
    }
    if let Some(v) = a.backend {
        p.backend = v;
    }
    if let Some(v) = a.noise_sigma {
        p.noise_sigma = v;
    }
    p.m = a.m.unwrap_or(10 * p.n * p.r_star);
    let seeds = match a.seed {
        Some(s) => Seeds::single(s),
        None => {
            let value = match spec.axis {
                Axis::Kappa => p.kappa,
                Axis::NoiseSigma => p.noise_sigma,
                _ => f64::NAN,
            };
            let index = spec.values.iter().position(|v| *v == value).unwrap_or(0);
            Seeds::derive(spec.master_seed, index, 0)
        }
    };
    Ok((spec, p, seeds))
}

fn problem_pairs(p: &ProblemSpec, seeds: &Seeds) -> Vec<(String, String)> {
    let kv = |k: &str, v: String| (k.to_string(), v);
    vec![
        kv("n", p.n.to_string()),
        kv("r_star", p.r_star.to_string()),
        kv("kappa", p.kappa.to_string()),
        kv("spectrum", p.spectrum.to_string()),
        kv("m", p.m.to_string()),
        kv("backend", p.backend.to_string()),
        kv("noise_sigma", p.noise_sigma.to_string()),
        kv("seed_truth", seeds.truth.to_string()),
        kv("seed_operator", seeds.operator.to_string()),
        kv("seed_noise", seeds.noise.to_string()),
        kv("seed_init", seeds.init.to_string()),
    ]
}

fn sidecar(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn write_sidecar(output: &Path, argv: &[String], mut pairs: Vec<(String, String)>) -> Result<()> {
    pairs.insert(0, ("argv".to_string(), argv.join(" ")));
    write_key_values(&pairs, &sidecar(output))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let (_, problem, seeds) = resolve_problem(&a.problem)?;
    let truth = make_ground_truth_with(problem.n, problem.r_star, problem.kappa, problem.spectrum, seeds.truth)?;
    let stored = StoredInstance { spec: problem, seeds, truth };
    let (meta, matrix) = write_instance(&stored, &a.output, a.format)?;
    println!("wrote {} and {}", meta.display(), matrix.display());
    Ok(())
}

fn cmd_run(a: &RunArgs, argv: &[String]) -> Result<()> {
    let (spec, mut problem, mut seeds) = resolve_problem(&a.problem)?;
    if let Some(meta) = &a.instance {
        let stored = read_instance(meta)?;
        problem = stored.spec;
        seeds = stored.seeds;
    }
    let inst = problem.build(&seeds)?;

    let mut cfg = spec.solver.clone();
    cfg.algorithm = a.algorithm;
    cfg.seed_init = seeds.init;
    cfg.record_every = a.record_every;
    cfg.diagnostics = a.diagnostics;
    cfg.checkpoints = a.checkpoints.is_some();
    if let Some(v) = a.r {
        cfg.r = v;
    }
    if let Some(v) = a.eta {
        cfg.eta = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if a.target.is_some() || a.patience.is_some() {
        cfg.stop.target_rel_err = a.target;
        cfg.stop.patience = a.patience;
    }
    cfg.lambda = match (a.algorithm, a.lambda, a.lambda_auto) {
        (Algorithm::ScaledGdLambda, Some(v), _) => LambdaRule::Fixed(v),
        (Algorithm::ScaledGdLambda, None, Some(k)) => LambdaRule::Auto { rank_guess: k, c_frac: DEFAULT_C_FRAC },
        (Algorithm::ScaledGdLambda, None, None) => cfg.lambda,
        (_, None, None) => LambdaRule::Fixed(0.0),
        (alg, _, _) => return Err(Error::InvalidArgument(format!("--lambda and --lambda-auto apply to scaled-gd-lambda only, not {alg}"))),
    };
    cfg.init = match a.init {
        Some(InitArg::SmallRandom) => Init::SmallRandom,
        Some(InitArg::Spectral) => Init::Spectral,
        None if a.algorithm == Algorithm::PrecGd => Init::Spectral,
        None => Init::SmallRandom,
    };

    let traj = inst.run(&cfg)?;
    write_trajectory_csv(&traj, &a.output, !a.no_timing)?;
    if let Some(path) = &a.checkpoints {
        write_checkpoints(&traj.checkpoints, path)?;
    }

    let kv = |k: &str, v: String| (k.to_string(), v);
    let mut pairs = vec![kv("command", "run".into()), kv("preset", a.problem.preset.clone())];
    if let Some(meta) = &a.instance {
        pairs.push(kv("instance", meta.display().to_string()));
    }
    pairs.extend(problem_pairs(&problem, &seeds));
    pairs.extend([
        kv("algorithm", cfg.algorithm.to_string()),
        kv("r", cfg.r.to_string()),
        kv("eta", cfg.eta.to_string()),
        kv("lambda", cfg.lambda.to_string()),
        kv("lambda_used", traj.lambda.map_or(String::new(), |v| v.to_string())),
        kv("alpha", cfg.alpha.to_string()),
        kv("init", cfg.init.name().into()),
        kv("max_iters", cfg.max_iters.to_string()),
        kv("target", cfg.stop.target_rel_err.map_or("none".into(), |v| v.to_string())),
        kv("patience", cfg.stop.patience.map_or("none".into(), |v| v.to_string())),
        kv("improve_tol", cfg.stop.improve_tol.to_string()),
        kv("record_every", cfg.record_every.to_string()),
        kv("stop_reason", traj.stop_reason.to_string()),
        kv("iterations", traj.final_state.t.to_string()),
    ]);
    write_sidecar(&a.output, argv, pairs)?;

    let (fro, op) = traj.final_errors.unwrap_or((f64::NAN, f64::NAN));
    println!(
        "{} stopped by {} after {} iterations: rel_err_fro={fro:.3e} rel_err_op={op:.3e}{}",
        cfg.algorithm,
        traj.stop_reason,
        traj.final_state.t,
        traj.lambda.map_or(String::new(), |l| format!(" lambda={l:.4e}"))
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> Result<()> {
    let mut spec = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            parse_sweep_config(&text).map_err(|e| Error::Parse { path: path.clone(), msg: e.to_string() })?
        }
        None => preset(a.preset.as_deref().unwrap_or("ci-small"))?,
    };
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if let Some(s) = a.seed {
        spec.master_seed = s;
    }
    spec.timing = !a.no_timing;

    let records = run_sweep(&spec)?;
    write_sweep_csv(&records, &a.output)?;

    let kv = |k: &str, v: String| (k.to_string(), v);
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
    let mut pairs = vec![
        kv("command", "sweep".into()),
        kv("name", spec.name.clone()),
        kv("axis", spec.axis.to_string()),
        kv("values", join(&spec.values)),
        kv("trials", spec.trials.to_string()),
        kv("master_seed", spec.master_seed.to_string()),
    ];
    let p = &spec.problem;
    pairs.extend([
        kv("n", p.n.to_string()),
        kv("r_star", p.r_star.to_string()),
        kv("kappa", p.kappa.to_string()),
        kv("spectrum", p.spectrum.to_string()),
        kv("m", p.m.to_string()),
        kv("backend", p.backend.to_string()),
        kv("noise_sigma", p.noise_sigma.to_string()),
    ]);
    let s = &spec.solver;
    pairs.extend([
        kv("r", s.r.to_string()),
        kv("eta", s.eta.to_string()),
        kv("lambda", s.lambda.to_string()),
        kv("alpha", s.alpha.to_string()),
        kv("max_iters", s.max_iters.to_string()),
        kv("target", s.stop.target_rel_err.map_or("none".into(), |v| v.to_string())),
        kv("patience", s.stop.patience.map_or("none".into(), |v| v.to_string())),
        kv("gd_etas", spec.gd_tuning.as_deref().map_or("none".into(), join)),
        kv("gd_max_iters", spec.gd_max_iters.to_string()),
        kv("timing", spec.timing.to_string()),
    ]);
    write_sidecar(&a.output, argv, pairs)?;

    println!("{:>12}  {:<17} {:>7} {:>12} {:>14}", spec.axis, "algorithm", "reached", "median_iters", "median_rel_err");
    let summary = summarize(&records);
    for s in &summary {
        let value = match spec.axis {
            Axis::Kappa | Axis::RankR => s.axis_value.to_string(),
            _ => format!("{:e}", s.axis_value),
        };
        println!(
            "{:>12}  {:<17} {:>3}/{:<3} {:>12} {:>14}",
            value,
            s.algorithm.name(),
            s.reached,
            s.trials,
            s.median_iters.map_or("-".into(), |v| v.to_string()),
            s.median_rel_err_fro.map_or("-".into(), |v| format!("{v:.3e}"))
        );
    }
    match spec.axis {
        Axis::Alpha => {
            let points: Vec<(f64, f64)> = summary.iter().filter_map(|s| Some((s.axis_value, s.median_rel_err_fro?))).collect();
            match fit_loglog_slope(&points) {
                Ok(fit) => println!("log-log slope of final error vs alpha: {:.3} (r^2 = {:.3})", fit.slope, fit.r_squared),
                Err(e) => println!("slope fit unavailable: {e}"),
            }
        }
        Axis::NoiseSigma => {
            for s in &summary {
                println!("sigma={:e}: minimax reference {:.4e}", s.axis_value, minimax_reference(s.axis_value, p.n, p.r_star));
            }
        }
        _ => {}
    }
    println!("wrote {}", a.output.display());
    Ok(())
}

fn cmd_diag(a: &DiagArgs, argv: &[String]) -> Result<()> {
    let stored = read_instance(&a.instance)?;
    let inst = stored.spec.build(&stored.seeds)?;
    let reference = Reference::new(&inst.truth);
    let checkpoints = read_checkpoints(&a.checkpoints)?;
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (t, x) in &checkpoints {
        let (fro, op) = reference.errors(x);
        let phase = phase_metrics(&decompose_iterate(x, &inst.truth)?, &inst.truth, a.lambda);
        rows.push(TrajectoryRow {
            iter: *t,
            loss: loss(&inst.op, inst.y(), x)?,
            rel_err_fro: Some(fro),
            rel_err_op: Some(op),
            sigma_min_scaled: Some(phase.sigma_min_scaled),
            misalign: Some(phase.misalign),
            gamma_norm: Some(phase.gamma_norm),
            overparam_norm: Some(phase.overparam_norm),
            elapsed_ms: None,
        });
    }
    write_trajectory_rows(&rows, &a.output)?;
    let kv = |k: &str, v: String| (k.to_string(), v);
    write_sidecar(
        &a.output,
        argv,
        vec![
            kv("command", "diag".into()),
            kv("instance", a.instance.display().to_string()),
            kv("checkpoints", a.checkpoints.display().to_string()),
            kv("lambda", a.lambda.to_string()),
        ],
    )?;
    println!("wrote {} rows to {}", rows.len(), a.output.display());
    Ok(())
}

fn cmd_rip(a: &RipArgs) -> Result<()> {
    let op = if a.identity {
        identity_operator(a.n)
    } else {
        gaussian_operator(a.n, a.m, a.seed, a.backend)?
    };
    let est = estimate_rip_constant(&op, a.rank, a.trials, a.seed.wrapping_add(1))?;
    println!("operator   {}", if a.identity { "identity".to_string() } else { format!("gaussian {} m={}", a.backend, a.m) });
    println!("n          {}", a.n);
    println!("rank       {}", est.rank);
    println!("trials     {}", est.trials);
    println!("min_ratio  {:.6}", est.min_ratio);
    println!("max_ratio  {:.6}", est.max_ratio);
    println!("delta_hat  {:.6}", est.delta_hat);
    Ok(())
}
