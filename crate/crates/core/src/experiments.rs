//! Parameter sweeps over condition number, initialization scale,
//! overparameterization rank and noise level.
//!
//! Every `(axis_index, trial)` point derives its own seeds from the master
//! seed, so adding trials or values never changes existing points. Records
//! come out ordered by `(axis_index, trial, algorithm)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::problem::{make_ground_truth_with, GroundTruth, NoiseModel, Spectrum};
use crate::rng::StreamKey;
use crate::sensing::{gaussian_operator_with_cap, measure, Backend, Measurements, SensingOperator, DEFAULT_MEMORY_CAP};
use crate::solver::{
    run, Algorithm, Init, LambdaRule, SolverConfig, StopReason, StoppingRule, Trajectory,
    DEFAULT_C_FRAC, DEFAULT_IMPROVE_TOL, DEFAULT_PATIENCE,
};

/// GD learning rates tried per point; the fastest to the target wins.
pub const DEFAULT_GD_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.8];
pub const DEFAULT_TRIALS: usize = 3;
pub const DEFAULT_GD_MAX_ITERS: usize = 30_000;

/// Everything needed to materialize one sensing problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    pub r_star: usize,
    pub kappa: f64,
    pub spectrum: Spectrum,
    pub m: usize,
    pub backend: Backend,
    pub noise_sigma: f64,
    pub memory_cap: u64,
}

impl ProblemSpec {
    /// `n`, `r*` with the customary `m = 10 n r*`.
    pub fn new(n: usize, r_star: usize, kappa: f64) -> Self {
        ProblemSpec {
            n,
            r_star,
            kappa,
            spectrum: Spectrum::Linear,
            m: 10 * n * r_star,
            backend: Backend::Dense,
            noise_sigma: 0.0,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    pub fn build(&self, seeds: &Seeds) -> Result<Instance> {
        let truth = make_ground_truth_with(self.n, self.r_star, self.kappa, self.spectrum, seeds.truth)?;
        let op = gaussian_operator_with_cap(self.n, self.m, seeds.operator, self.backend, self.memory_cap)?;
        let noise = NoiseModel::new(self.noise_sigma, seeds.noise)?;
        let measurements = measure(&op, &truth, &noise)?;
        Ok(Instance {
            truth,
            op,
            measurements,
        })
    }
}

/// Seeds for the independent random parts of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub truth: u64,
    pub operator: u64,
    pub noise: u64,
    pub init: u64,
}

impl Seeds {
    pub fn derive(master: u64, axis_index: usize, trial: usize) -> Self {
        Seeds::from_key(StreamKey::new(master).split(axis_index as u64).split(trial as u64))
    }

    /// Seeds for a single standalone run.
    pub fn single(master: u64) -> Self {
        Seeds::derive(master, 0, 0)
    }

    fn from_key(key: StreamKey) -> Self {
        Seeds {
            truth: key.split(0).seed(),
            operator: key.split(1).seed(),
            noise: key.split(2).seed(),
            init: key.split(3).seed(),
        }
    }
}

pub struct Instance {
    pub truth: GroundTruth,
    pub op: SensingOperator,
    pub measurements: Measurements,
}

impl Instance {
    pub fn y(&self) -> &[f64] {
        self.measurements.y.as_slice()
    }

    pub fn run(&self, config: &SolverConfig) -> Result<Trajectory> {
        run(&self.op, self.y(), config, Some(&self.truth))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Kappa,
    Alpha,
    RankR,
    NoiseSigma,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Kappa => "kappa",
            Axis::Alpha => "alpha",
            Axis::RankR => "rank_r",
            Axis::NoiseSigma => "noise_sigma",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(Axis::Kappa),
            "alpha" => Ok(Axis::Alpha),
            "rank_r" | "r" => Ok(Axis::RankR),
            "noise_sigma" | "sigma" => Ok(Axis::NoiseSigma),
            other => Err(Error::invalid(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub problem: ProblemSpec,
    /// Template for the ScaledGD(λ) runs; `algorithm` and `seed_init` are
    /// overwritten per point.
    pub solver: SolverConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    /// Learning-rate grid for the GD baseline of the `kappa` axis.
    pub gd_tuning: Option<Vec<f64>>,
    /// Iteration budget for each GD candidate.
    pub gd_max_iters: usize,
    /// Learning rate of the PrecGD baseline on the `rank_r` axis
    /// (defaults to the ScaledGD(λ) rate).
    pub baseline_eta: Option<f64>,
    pub master_seed: u64,
    /// Write measured wall time; off makes the CSV byte-reproducible.
    pub timing: bool,
}

impl SweepSpec {
    /// A sweep with the default trial count, GD grid (for `kappa`) and timing on.
    pub fn new(name: &str, problem: ProblemSpec, solver: SolverConfig, axis: Axis, values: Vec<f64>) -> Self {
        SweepSpec {
            name: name.to_string(),
            problem,
            solver,
            axis,
            values,
            trials: DEFAULT_TRIALS,
            gd_tuning: (axis == Axis::Kappa).then(|| DEFAULT_GD_GRID.to_vec()),
            gd_max_iters: DEFAULT_GD_MAX_ITERS,
            baseline_eta: None,
            master_seed: 0,
            timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sweep values must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.axis == Axis::RankR && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(Error::invalid("rank_r values must be positive integers"));
        }
        if let Some(grid) = &self.gd_tuning {
            if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::invalid("gd tuning grid must hold positive rates"));
            }
        }
        Ok(())
    }
}

/// How a run ended, including divergence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Stopped(StopReason),
    Diverged,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Stopped(r) => r.name(),
            Outcome::Diverged => "diverged",
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "target_reached" => Outcome::Stopped(StopReason::TargetReached),
            "patience" => Outcome::Stopped(StopReason::Patience),
            "max_iters" => Outcome::Stopped(StopReason::MaxIters),
            "diverged" => Outcome::Diverged,
            other => return Err(Error::invalid(format!("unknown stop reason `{other}`"))),
        })
    }
}

/// One row of a sweep CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub axis: Axis,
    pub axis_value: f64,
    pub trial: usize,
    pub algorithm: Algorithm,
    /// `None` when the target was never reached.
    pub iters_to_target: Option<usize>,
    pub final_rel_err_fro: f64,
    pub final_rel_err_op: f64,
    pub stop_reason: Outcome,
    pub wall_ms: Option<f64>,
}

fn execute(
    inst: &Instance,
    config: &SolverConfig,
    axis: Axis,
    axis_value: f64,
    trial: usize,
    timing: bool,
) -> Result<ExperimentRecord> {
    let clock = Instant::now();
    let result = inst.run(config);
    let wall_ms = timing.then(|| clock.elapsed().as_secs_f64() * 1e3);
    let base = ExperimentRecord {
        axis,
        axis_value,
        trial,
        algorithm: config.algorithm,
        iters_to_target: None,
        final_rel_err_fro: f64::INFINITY,
        final_rel_err_op: f64::INFINITY,
        stop_reason: Outcome::Diverged,
        wall_ms,
    };
    match result {
        Ok(traj) => {
            let (fro, op) = traj.final_errors.unwrap_or((f64::NAN, f64::NAN));
            Ok(ExperimentRecord {
                iters_to_target: traj.iters_to_target(),
                final_rel_err_fro: fro,
                final_rel_err_op: op,
                stop_reason: Outcome::Stopped(traj.stop_reason),
                ..base
            })
        }
        Err(Error::Diverged { .. }) => Ok(base),
        Err(e) => Err(e),
    }
}

/// Result of tuning GD's learning rate on one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TunedGd {
    pub record: ExperimentRecord,
    /// Chosen rate; `None` if every candidate diverged.
    pub eta: Option<f64>,
}

/// Runs GD for every rate in `grid` (largest first) and keeps the one that
/// reaches the target in the fewest iterations. Later candidates get the
/// current best count as their budget. If none reaches the target, the
/// non-divergent candidate with the lowest final error is reported.
pub fn tune_gd(
    inst: &Instance,
    template: &SolverConfig,
    grid: &[f64],
    budget: usize,
    axis_value: f64,
    trial: usize,
    timing: bool,
) -> Result<TunedGd> {
    let mut rates = grid.to_vec();
    rates.sort_by(|a, b| b.total_cmp(a));
    let clock = Instant::now();
    let mut best: Option<(usize, f64, ExperimentRecord)> = None;
    let mut fallback: Option<(f64, ExperimentRecord)> = None;
    for eta in rates {
        let mut cfg = template.clone();
        cfg.algorithm = Algorithm::Gd;
        cfg.lambda = LambdaRule::Fixed(0.0);
        cfg.eta = eta;
        cfg.max_iters = best.as_ref().map_or(budget, |(iters, _, _)| *iters);
        let rec = execute(inst, &cfg, Axis::Kappa, axis_value, trial, false)?;
        match rec.iters_to_target {
            Some(iters) if best.as_ref().map_or(true, |(b, _, _)| iters < *b) => {
                best = Some((iters, eta, rec));
            }
            _ if best.is_none() && rec.stop_reason != Outcome::Diverged => {
                let better = fallback
                    .as_ref()
                    .map_or(true, |(_, f)| rec.final_rel_err_fro < f.final_rel_err_fro);
                if better {
                    fallback = Some((eta, rec));
                }
            }
            _ => {}
        }
    }
    let wall_ms = timing.then(|| clock.elapsed().as_secs_f64() * 1e3);
    let (eta, mut record) = match (best, fallback) {
        (Some((_, eta, rec)), _) => (Some(eta), rec),
        (None, Some((eta, rec))) => (Some(eta), rec),
        (None, None) => (
            None,
            ExperimentRecord {
                axis: Axis::Kappa,
                axis_value,
                trial,
                algorithm: Algorithm::Gd,
                iters_to_target: None,
                final_rel_err_fro: f64::INFINITY,
                final_rel_err_op: f64::INFINITY,
                stop_reason: Outcome::Diverged,
                wall_ms: None,
            },
        ),
    };
    record.wall_ms = wall_ms;
    Ok(TunedGd { record, eta })
}

fn scaled_config(spec: &SweepSpec, seeds: &Seeds) -> SolverConfig {
    let mut cfg = spec.solver.clone();
    cfg.algorithm = Algorithm::ScaledGdLambda;
    cfg.seed_init = seeds.init;
    cfg.init = Init::SmallRandom;
    cfg
}

fn check_axis(spec: &SweepSpec, axis: Axis) -> Result<()> {
    spec.validate()?;
    if spec.axis != axis {
        return Err(Error::invalid(format!(
            "sweep axis is `{}`, expected `{axis}`",
            spec.axis
        )));
    }
    Ok(())
}

/// ScaledGD(λ) against learning-rate-tuned GD for each `κ`.
pub fn sweep_condition_number(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>> {
    check_axis(spec, Axis::Kappa)?;
    let grid = spec.gd_tuning.clone().unwrap_or_else(|| DEFAULT_GD_GRID.to_vec());
    let mut records = Vec::new();
    for (ai, &kappa) in spec.values.iter().enumerate() {
        for trial in 0..spec.trials {
            let seeds = Seeds::derive(spec.master_seed, ai, trial);
            let problem = ProblemSpec { kappa, ..spec.problem.clone() };
            let inst = problem.build(&seeds)?;
            let cfg = scaled_config(spec, &seeds);
            records.push(execute(&inst, &cfg, Axis::Kappa, kappa, trial, spec.timing)?);
            let tuned = tune_gd(&inst, &cfg, &grid, spec.gd_max_iters, kappa, trial, spec.timing)?;
            records.push(tuned.record);
        }
    }
    Ok(records)
}

/// Final ScaledGD(λ) error as a function of the initialization scale.
pub fn sweep_init_scale(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>> {
    check_axis(spec, Axis::Alpha)?;
    let mut records = Vec::new();
    for (ai, &alpha) in spec.values.iter().enumerate() {
        for trial in 0..spec.trials {
            let seeds = Seeds::derive(spec.master_seed, ai, trial);
            let inst = spec.problem.build(&seeds)?;
            let mut cfg = scaled_config(spec, &seeds);
            cfg.alpha = alpha;
            records.push(execute(&inst, &cfg, Axis::Alpha, alpha, trial, spec.timing)?);
        }
    }
    Ok(records)
}

/// ScaledGD(λ) from small random init against PrecGD from spectral init
/// for each factor rank `r`.
pub fn sweep_overparam_rank(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>> {
    check_axis(spec, Axis::RankR)?;
    let mut records = Vec::new();
    for (ai, &rv) in spec.values.iter().enumerate() {
        let r = rv as usize;
        for trial in 0..spec.trials {
            let seeds = Seeds::derive(spec.master_seed, ai, trial);
            let inst = spec.problem.build(&seeds)?;
            let mut cfg = scaled_config(spec, &seeds);
            cfg.r = r;
            records.push(execute(&inst, &cfg, Axis::RankR, rv, trial, spec.timing)?);
            let mut prec = cfg.clone();
            prec.algorithm = Algorithm::PrecGd;
            prec.init = Init::Spectral;
            prec.lambda = LambdaRule::Fixed(0.0);
            prec.eta = spec.baseline_eta.unwrap_or(cfg.eta);
            records.push(execute(&inst, &prec, Axis::RankR, rv, trial, spec.timing)?);
        }
    }
    Ok(records)
}

/// ScaledGD(λ) under measurement noise of each level `σ`.
pub fn sweep_noise(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>> {
    check_axis(spec, Axis::NoiseSigma)?;
    let mut records = Vec::new();
    for (ai, &sigma) in spec.values.iter().enumerate() {
        for trial in 0..spec.trials {
            let seeds = Seeds::derive(spec.master_seed, ai, trial);
            let problem = ProblemSpec {
                noise_sigma: sigma,
                ..spec.problem.clone()
            };
            let inst = problem.build(&seeds)?;
            let cfg = scaled_config(spec, &seeds);
            records.push(execute(&inst, &cfg, Axis::NoiseSigma, sigma, trial, spec.timing)?);
        }
    }
    Ok(records)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>> {
    match spec.axis {
        Axis::Kappa => sweep_condition_number(spec),
        Axis::Alpha => sweep_init_scale(spec),
        Axis::RankR => sweep_overparam_rank(spec),
        Axis::NoiseSigma => sweep_noise(spec),
    }
}

/// Minimax reference error `σ √(n r*)` for Frobenius recovery under noise.
pub fn minimax_reference(sigma: f64, n: usize, r_star: usize) -> f64 {
    sigma * ((n * r_star) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(Error::invalid("slope fit needs at least two points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::invalid("slope fit needs positive coordinates"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Median of the finite values, or `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

pub const PRESETS: [&str; 5] = ["ci-small", "paper-fig1", "fig-alpha", "fig-r", "fig-noisy"];

fn scaled_template(r: usize, r_star: usize) -> SolverConfig {
    let mut cfg = SolverConfig::new(Algorithm::ScaledGdLambda, r);
    cfg.eta = 0.3;
    cfg.lambda = LambdaRule::Auto {
        rank_guess: r_star,
        c_frac: DEFAULT_C_FRAC,
    };
    cfg
}

/// Initialization scale for a target accuracy `ε`: `α = ε³` (with `‖X*‖ = 1`).
pub fn alpha_for_target(eps: f64) -> f64 {
    eps.powi(3)
}

/// Named sweep configurations.
pub fn preset(name: &str) -> Result<SweepSpec> {
    let target = 1e-9;
    let (problem, axis, values, mut solver, gd_max_iters) = match name {
        "ci-small" => {
            let mut s = scaled_template(5, 3);
            s.alpha = alpha_for_target(target);
            s.stop = StoppingRule::target(target);
            s.max_iters = 2000;
            (ProblemSpec::new(60, 3, 1.0), Axis::Kappa, (1..=7).map(f64::from).collect(), s, 30_000)
        }
        "paper-fig1" => {
            let mut s = scaled_template(5, 3);
            s.alpha = alpha_for_target(target);
            s.stop = StoppingRule::target(target);
            s.max_iters = 2000;
            (ProblemSpec::new(150, 3, 1.0), Axis::Kappa, (1..=7).map(f64::from).collect(), s, 30_000)
        }
        "fig-alpha" => {
            let mut s = scaled_template(5, 3);
            s.stop = StoppingRule {
                target_rel_err: None,
                patience: Some(DEFAULT_PATIENCE),
                improve_tol: DEFAULT_IMPROVE_TOL,
            };
            s.max_iters = 5000;
            (ProblemSpec::new(60, 3, 2.0), Axis::Alpha, vec![1e-12, 1e-10, 1e-8, 1e-6], s, 0)
        }
        "fig-r" => {
            let mut s = scaled_template(5, 3);
            s.alpha = alpha_for_target(target);
            s.stop = StoppingRule::target(target);
            s.max_iters = 1000;
            (ProblemSpec::new(150, 3, 2.0), Axis::RankR, vec![3.0, 5.0, 10.0, 20.0], s, 0)
        }
        "fig-noisy" => {
            let mut s = scaled_template(5, 3);
            s.alpha = alpha_for_target(target);
            s.stop = StoppingRule::patience(DEFAULT_PATIENCE);
            s.max_iters = 3000;
            (ProblemSpec::new(150, 3, 2.0), Axis::NoiseSigma, vec![1e-3, 1e-2, 1e-1], s, 0)
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown preset `{other}`; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    solver.record_every = 1;
    let mut spec = SweepSpec::new(name, problem, solver, axis, values);
    // Figure presets are single runs; raise `trials` for spread estimates.
    spec.trials = 1;
    spec.gd_max_iters = gd_max_iters;
    spec.master_seed = 2023;
    Ok(spec)
}

/// Per `(axis_value, algorithm)` medians across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSummary {
    pub axis_value: f64,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub reached: usize,
    /// Median iterations to target, counting misses as infinite; `None`
    /// when that median is a miss.
    pub median_iters: Option<f64>,
    pub median_rel_err_fro: Option<f64>,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<PointSummary> {
    let mut keys: Vec<(f64, Algorithm)> = Vec::new();
    for r in records {
        if !keys.iter().any(|k| k.0 == r.axis_value && k.1 == r.algorithm) {
            keys.push((r.axis_value, r.algorithm));
        }
    }
    keys.into_iter()
        .map(|(axis_value, algorithm)| {
            let group: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.axis_value == axis_value && r.algorithm == algorithm)
                .collect();
            let iters = group
                .iter()
                .map(|r| r.iters_to_target.map_or(f64::INFINITY, |v| v as f64));
            let mut sorted: Vec<f64> = iters.collect();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            let med = if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                0.5 * (sorted[mid - 1] + sorted[mid])
            };
            PointSummary {
                axis_value,
                algorithm,
                trials: group.len(),
                reached: group.iter().filter(|r| r.iters_to_target.is_some()).count(),
                median_iters: med.is_finite().then_some(med),
                median_rel_err_fro: median(group.iter().map(|r| r.final_rel_err_fro)),
            }
        })
        .collect()
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("`{key}`: bad number `{s}`")))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("`{key}`: bad value `{value}`")))
}

/// Splits `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Builds a sweep from the `key = value` config grammar.
///
/// `preset` (default `ci-small`) is applied first wherever it appears; the
/// remaining keys override it: `axis`, `values`, `trials`, `seed`, `n`,
/// `r_star`, `r`, `m`, `kappa`, `spectrum`, `backend`, `noise_sigma`,
/// `memory_cap`, `eta`, `lambda`, `alpha`, `max_iters`, `target`,
/// `patience`, `improve_tol`, `record_every`, `gd_etas`, `gd_max_iters`,
/// `baseline_eta`, `timing`. `target` and `patience` accept `none`.
pub fn parse_sweep_config(text: &str) -> Result<SweepSpec> {
    let pairs = parse_key_values(text)?;
    let preset_name = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "preset")
        .map(|(_, v)| v.as_str())
        .unwrap_or("ci-small");
    let mut spec = preset(preset_name)?;
    let mut m_set = false;
    for (key, value) in &pairs {
        let (k, v) = (key.as_str(), value.as_str());
        match k {
            "preset" => {}
            "axis" => spec.axis = v.parse()?,
            "values" => spec.values = parse_list(k, v)?,
            "trials" => spec.trials = parse_num(k, v)?,
            "seed" => spec.master_seed = parse_num(k, v)?,
            "n" => spec.problem.n = parse_num(k, v)?,
            "r_star" => spec.problem.r_star = parse_num(k, v)?,
            "r" => spec.solver.r = parse_num(k, v)?,
            "m" => {
                spec.problem.m = parse_num(k, v)?;
                m_set = true;
            }
            "kappa" => spec.problem.kappa = parse_num(k, v)?,
            "spectrum" => spec.problem.spectrum = v.parse()?,
            "backend" => spec.problem.backend = v.parse()?,
            "noise_sigma" => spec.problem.noise_sigma = parse_num(k, v)?,
            "memory_cap" => spec.problem.memory_cap = parse_num(k, v)?,
            "eta" => spec.solver.eta = parse_num(k, v)?,
            "lambda" => spec.solver.lambda = v.parse()?,
            "alpha" => spec.solver.alpha = parse_num(k, v)?,
            "max_iters" => spec.solver.max_iters = parse_num(k, v)?,
            "target" => {
                spec.solver.stop.target_rel_err = if v == "none" { None } else { Some(parse_num(k, v)?) }
            }
            "patience" => {
                spec.solver.stop.patience = if v == "none" { None } else { Some(parse_num(k, v)?) }
            }
            "improve_tol" => spec.solver.stop.improve_tol = parse_num(k, v)?,
            "record_every" => spec.solver.record_every = parse_num(k, v)?,
            "gd_etas" => spec.gd_tuning = Some(parse_list(k, v)?),
            "gd_max_iters" => spec.gd_max_iters = parse_num(k, v)?,
            "baseline_eta" => spec.baseline_eta = Some(parse_num(k, v)?),
            "timing" => spec.timing = parse_num(k, v)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
    }
    if !m_set && pairs.iter().any(|(k, _)| k == "n" || k == "r_star") {
        spec.problem.m = 10 * spec.problem.n * spec.problem.r_star;
    }
    spec.validate()?;
    Ok(spec)
}
