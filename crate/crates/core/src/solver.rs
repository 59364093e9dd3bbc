//! Factored gradient methods on `f(X) = ¼‖𝒜(X Xᵀ) − y‖²`.
//!
//! All four algorithms share one update shape,
//! `X ← X − η ∇f(X) P(X)`, and differ only in the right preconditioner:
//!
//! | algorithm          | `P(X)`                        |
//! |--------------------|-------------------------------|
//! | `gd`               | `I`                           |
//! | `scaled-gd`        | `(XᵀX)⁻¹`                     |
//! | `scaled-gd-lambda` | `(XᵀX + λI)⁻¹`, fixed `λ > 0` |
//! | `prec-gd`          | `(XᵀX + √f(X) I)⁻¹`           |
//!
//! The gradient is always formed from `𝒜*(𝒜(XXᵀ) − y)`, so noisy and
//! noiseless problems run through the same code.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};

use crate::diagnostics::{
    decompose_iterate_with, orthonormal_complement, phase_metrics, PhaseMetrics, Reference,
};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::problem::Truth;
use crate::rng::StreamKey;
use crate::sensing::{smat, svec, SensingOperator};

pub const DEFAULT_PATIENCE: usize = 100;
pub const DEFAULT_IMPROVE_TOL: f64 = 1e-3;
pub const DEFAULT_C_FRAC: f64 = 0.25;
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    ScaledGdLambda,
    Gd,
    ScaledGd,
    PrecGd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ScaledGdLambda,
        Algorithm::Gd,
        Algorithm::ScaledGd,
        Algorithm::PrecGd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ScaledGdLambda => "scaled-gd-lambda",
            Algorithm::Gd => "gd",
            Algorithm::ScaledGd => "scaled-gd",
            Algorithm::PrecGd => "prec-gd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s || a.name().replace('-', "_") == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

/// How the fixed damping of ScaledGD(λ) is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    Fixed(f64),
    /// `c_frac · λ_{rank_guess}(𝒜*(y))`, see [`estimate_damping`].
    Auto { rank_guess: usize, c_frac: f64 },
}

impl fmt::Display for LambdaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaRule::Fixed(v) => write!(f, "{v:e}"),
            LambdaRule::Auto { rank_guess, c_frac } if *c_frac == DEFAULT_C_FRAC => {
                write!(f, "auto:{rank_guess}")
            }
            LambdaRule::Auto { rank_guess, c_frac } => write!(f, "auto:{rank_guess}:{c_frac}"),
        }
    }
}

impl FromStr for LambdaRule {
    type Err = Error;

    /// `0.01`, `auto:3`, or `auto:3:0.25`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad lambda `{s}`; expected a number or auto:<rank>[:<c_frac>]"));
        if let Some(rest) = s.strip_prefix("auto:") {
            let mut parts = rest.split(':');
            let rank_guess = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
            let c_frac = match parts.next() {
                Some(p) => p.parse().map_err(|_| bad())?,
                None => DEFAULT_C_FRAC,
            };
            if parts.next().is_some() {
                return Err(bad());
            }
            Ok(LambdaRule::Auto { rank_guess, c_frac })
        } else {
            s.parse().map(LambdaRule::Fixed).map_err(|_| bad())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// `X₀ = α G`, `G` with i.i.d. `N(0, 1/n)` entries.
    SmallRandom,
    /// Top-`r` eigenpairs of `𝒜*(y)`.
    Spectral,
    Explicit(DMatrix<f64>),
}

impl Init {
    pub fn name(&self) -> &'static str {
        match self {
            Init::SmallRandom => "small-random",
            Init::Spectral => "spectral",
            Init::Explicit(_) => "explicit",
        }
    }
}

/// Early-stopping rules; whichever fires first ends the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingRule {
    /// Stop once `‖XXᵀ − M*‖_F / ‖M*‖ <= target` (needs an oracle).
    pub target_rel_err: Option<f64>,
    /// Stop when the loss has not dropped by a relative `improve_tol` for
    /// this many iterations.
    pub patience: Option<usize>,
    pub improve_tol: f64,
}

impl StoppingRule {
    pub fn target(target: f64) -> Self {
        StoppingRule {
            target_rel_err: Some(target),
            patience: None,
            improve_tol: DEFAULT_IMPROVE_TOL,
        }
    }

    pub fn patience(patience: usize) -> Self {
        StoppingRule {
            target_rel_err: None,
            patience: Some(patience),
            improve_tol: DEFAULT_IMPROVE_TOL,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.target_rel_err.is_none() && self.patience.is_none() {
            return Err(Error::invalid("stopping rule needs a target, a patience, or both"));
        }
        if let Some(t) = self.target_rel_err {
            if !(t >= 0.0) {
                return Err(Error::invalid(format!("target must be >= 0, got {t}")));
            }
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if !(self.improve_tol >= 0.0 && self.improve_tol < 1.0) {
            return Err(Error::invalid("improve_tol must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            target_rel_err: None,
            patience: Some(DEFAULT_PATIENCE),
            improve_tol: DEFAULT_IMPROVE_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub r: usize,
    pub eta: f64,
    /// Used by `scaled-gd-lambda` only; `scaled-gd` requires `Fixed(0)`.
    pub lambda: LambdaRule,
    pub alpha: f64,
    pub init: Init,
    pub max_iters: usize,
    pub stop: StoppingRule,
    pub seed_init: u64,
    /// Record every k-th iterate; the final iterate is always recorded.
    pub record_every: usize,
    /// Attach [`PhaseMetrics`] to records (needs an oracle).
    pub diagnostics: bool,
    /// Keep a copy of `X_t` at every record.
    pub checkpoints: bool,
    pub divergence_factor: f64,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, r: usize) -> Self {
        SolverConfig {
            algorithm,
            r,
            eta: 0.3,
            lambda: match algorithm {
                Algorithm::ScaledGdLambda => LambdaRule::Auto {
                    rank_guess: r,
                    c_frac: DEFAULT_C_FRAC,
                },
                _ => LambdaRule::Fixed(0.0),
            },
            alpha: 1e-3,
            init: Init::SmallRandom,
            max_iters: 1000,
            stop: StoppingRule::default(),
            seed_init: 0,
            record_every: 1,
            diagnostics: false,
            checkpoints: false,
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.r == 0 || self.r > n {
            return Err(Error::invalid(format!("factor rank r must lie in 1..={n}, got {}", self.r)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if matches!(self.init, Init::SmallRandom) && !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        match (self.algorithm, self.lambda) {
            (Algorithm::ScaledGd, LambdaRule::Fixed(v)) if v == 0.0 => {}
            (Algorithm::ScaledGd, _) => {
                return Err(Error::invalid("scaled-gd is the lambda = 0 case; use scaled-gd-lambda for damping"))
            }
            (Algorithm::ScaledGdLambda, LambdaRule::Fixed(v)) if !(v >= 0.0) => {
                return Err(Error::invalid(format!("lambda must be >= 0, got {v}")))
            }
            (Algorithm::ScaledGdLambda, LambdaRule::Auto { rank_guess, c_frac }) => {
                if rank_guess == 0 || rank_guess > n {
                    return Err(Error::invalid(format!("lambda rank guess must lie in 1..={n}")));
                }
                if !(c_frac > 0.0) {
                    return Err(Error::invalid("lambda c_frac must be positive"));
                }
            }
            _ => {}
        }
        if let Init::Explicit(x0) = &self.init {
            if x0.shape() != (n, self.r) {
                return Err(Error::DimensionMismatch {
                    what: "explicit initial iterate columns",
                    expected: self.r,
                    got: x0.ncols(),
                });
            }
        }
        self.stop.validate()
    }
}

/// `f(X) = ¼‖𝒜(X Xᵀ) − y‖²`.
pub fn loss(op: &SensingOperator, y: &[f64], x: &DMatrix<f64>) -> Result<f64> {
    check_dims(op, y, x)?;
    let residual = residual(op, y, x);
    Ok(0.25 * residual.iter().map(|v| v * v).sum::<f64>())
}

/// `∇f(X) = 𝒜*(𝒜(X Xᵀ) − y) X`.
pub fn gradient(op: &SensingOperator, y: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(loss_and_gradient(op, y, x)?.1)
}

pub fn loss_and_gradient(
    op: &SensingOperator,
    y: &[f64],
    x: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_dims(op, y, x)?;
    let (residual, back) = op.residual_adjoint_svec(&svec(&(x * x.transpose())), y);
    let f = 0.25 * residual.iter().map(|v| v * v).sum::<f64>();
    let back = smat(&back, op.n());
    Ok((f, back * x))
}

fn residual(op: &SensingOperator, y: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    let mut out = op.forward_svec(&svec(&(x * x.transpose())));
    for (o, yi) in out.iter_mut().zip(y) {
        *o -= yi;
    }
    out
}

fn check_dims(op: &SensingOperator, y: &[f64], x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != op.n() {
        return Err(Error::DimensionMismatch {
            what: "iterate rows",
            expected: op.n(),
            got: x.nrows(),
        });
    }
    if y.len() != op.m() {
        return Err(Error::DimensionMismatch {
            what: "measurement vector length",
            expected: op.m(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `X − η G (XᵀX + λI)⁻¹`, solved through a Cholesky factorization.
pub fn step_scaled_gd_lambda(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    eta: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let r = x.ncols();
    let mut gram = x.transpose() * x;
    for i in 0..r {
        gram[(i, i)] += lambda;
    }
    let chol = Cholesky::new(gram).ok_or(Error::SingularPreconditioner)?;
    // G P⁻¹ = (P⁻¹ Gᵀ)ᵀ since P is symmetric.
    let direction = chol.solve(&grad.transpose()).transpose();
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularPreconditioner);
    }
    Ok(x - direction * eta)
}

pub fn step_gd(x: &DMatrix<f64>, grad: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    x - grad * eta
}

pub fn step_scaled_gd(x: &DMatrix<f64>, grad: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    step_scaled_gd_lambda(x, grad, eta, 0.0)
}

/// PrecGD step with damping `√f(X)`.
pub fn step_prec_gd(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    eta: f64,
    current_loss: f64,
) -> Result<DMatrix<f64>> {
    if !(current_loss >= 0.0) {
        return Err(Error::invalid(format!("loss must be >= 0, got {current_loss}")));
    }
    step_scaled_gd_lambda(x, grad, eta, current_loss.sqrt())
}

/// `α G` with `G_ij ~ N(0, 1/n)` drawn column by column from `seed`.
pub fn random_init(n: usize, r: usize, alpha: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut g = DMatrix::zeros(n, r);
    StreamKey::new(seed).stream().fill_gaussian(g.as_mut_slice());
    let scale = 1.0 / (n as f64).sqrt();
    for v in g.iter_mut() {
        *v = (*v * scale) * alpha;
    }
    Ok(g)
}

/// `V_r diag(max(λ_i, 0))^{1/2}` from the top eigenpairs of `𝒜*(y)`.
pub fn spectral_init(op: &SensingOperator, y: &[f64], r: usize) -> Result<DMatrix<f64>> {
    if r == 0 || r > op.n() {
        return Err(Error::invalid(format!("rank must lie in 1..={}, got {r}", op.n())));
    }
    let back = backprojection(op, y)?;
    let (vals, vecs) = sym_eigen_desc(&back);
    let mut x = vecs.columns(0, r).into_owned();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col *= vals[j].max(0.0).sqrt();
    }
    Ok(x)
}

fn backprojection(op: &SensingOperator, y: &[f64]) -> Result<DMatrix<f64>> {
    if y.len() != op.m() {
        return Err(Error::DimensionMismatch {
            what: "measurement vector length",
            expected: op.m(),
            got: y.len(),
        });
    }
    Ok(smat(&op.adjoint_svec(y), op.n()))
}

/// Observable stand-in for `c σ_min²(X*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DampingEstimate {
    pub lambda_hat: f64,
    pub rank_guess: usize,
    pub c_frac: f64,
    /// Top `rank_guess` eigenvalues of `𝒜*(y)`, descending.
    pub spectrum_used: Vec<f64>,
}

/// `c_frac · max(λ_k(𝒜*(y)), 1e-12 λ_1)` with `k = rank_guess`.
pub fn estimate_damping(
    op: &SensingOperator,
    y: &[f64],
    rank_guess: usize,
    c_frac: f64,
) -> Result<DampingEstimate> {
    if rank_guess == 0 || rank_guess > op.n() {
        return Err(Error::invalid(format!(
            "rank_guess must lie in 1..={}, got {rank_guess}",
            op.n()
        )));
    }
    if !(c_frac > 0.0) {
        return Err(Error::invalid("c_frac must be positive"));
    }
    let (vals, _) = sym_eigen_desc(&backprojection(op, y)?);
    let floor = 1e-12 * vals[0].abs().max(f64::MIN_POSITIVE);
    Ok(DampingEstimate {
        lambda_hat: c_frac * vals[rank_guess - 1].max(floor),
        rank_guess,
        c_frac,
        spectrum_used: vals.iter().take(rank_guess).cloned().collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub x: DMatrix<f64>,
    pub t: usize,
    pub loss: f64,
    pub elapsed_ns: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: usize,
    pub loss: f64,
    pub rel_err_fro: Option<f64>,
    pub rel_err_op: Option<f64>,
    pub phase: Option<PhaseMetrics>,
    pub elapsed_ns: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    TargetReached,
    Patience,
    MaxIters,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::TargetReached => "target_reached",
            StopReason::Patience => "patience",
            StopReason::MaxIters => "max_iters",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub stop_reason: StopReason,
    pub final_state: IterateState,
    /// Fixed damping actually used (`None` for GD and PrecGD).
    pub lambda: Option<f64>,
    /// `(rel_err_fro, rel_err_op)` of the final iterate, when an oracle was given.
    pub final_errors: Option<(f64, f64)>,
    /// `(t, X_t)` at every record, when requested.
    pub checkpoints: Vec<(usize, DMatrix<f64>)>,
}

impl Trajectory {
    /// Iteration at which the target was hit, if it was.
    pub fn iters_to_target(&self) -> Option<usize> {
        (self.stop_reason == StopReason::TargetReached).then_some(self.final_state.t)
    }
}

/// Runs the configured algorithm from its initialization until a stopping
/// rule fires. `oracle` enables error tracking, the target rule, and
/// diagnostics.
pub fn run(
    op: &SensingOperator,
    y: &[f64],
    config: &SolverConfig,
    oracle: Option<&dyn Truth>,
) -> Result<Trajectory> {
    let n = op.n();
    config.validate(n)?;
    if y.len() != op.m() {
        return Err(Error::DimensionMismatch {
            what: "measurement vector length",
            expected: op.m(),
            got: y.len(),
        });
    }
    let reference = oracle.map(Reference::new);
    if let Some(rf) = &reference {
        if rf.ground_truth().n() != n {
            return Err(Error::DimensionMismatch {
                what: "oracle dimension",
                expected: n,
                got: rf.ground_truth().n(),
            });
        }
    }
    let target = config.stop.target_rel_err.filter(|_| reference.is_some());
    if target.is_none() && config.stop.patience.is_none() {
        return Err(Error::invalid("target stopping needs an oracle; give a patience rule too"));
    }

    let lambda = match config.algorithm {
        Algorithm::ScaledGdLambda => Some(match config.lambda {
            LambdaRule::Fixed(v) => v,
            LambdaRule::Auto { rank_guess, c_frac } => {
                estimate_damping(op, y, rank_guess, c_frac)?.lambda_hat
            }
        }),
        Algorithm::ScaledGd => Some(0.0),
        Algorithm::Gd | Algorithm::PrecGd => None,
    };

    let mut x = match &config.init {
        Init::SmallRandom => random_init(n, config.r, config.alpha, config.seed_init)?,
        Init::Spectral => spectral_init(op, y, config.r)?,
        Init::Explicit(x0) => x0.clone(),
    };

    let instrument = match (&reference, config.diagnostics) {
        (Some(rf), true) if config.r >= rf.ground_truth().r_star() => {
            Some(orthonormal_complement(rf.ground_truth().u_star())?)
        }
        _ => None,
    };
    let metric_lambda = |f: f64| match config.algorithm {
        Algorithm::PrecGd => f.sqrt(),
        _ => lambda.unwrap_or(0.0),
    };

    let clock = Instant::now();
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let (mut f, mut grad) = loss_and_gradient(op, y, &x)?;
    let limit = f.max(f64::MIN_POSITIVE) * config.divergence_factor;

    let mut record = |t: usize, x: &DMatrix<f64>, f: f64, rel_fro: Option<f64>| -> Result<()> {
        let rel_op = reference.as_ref().map(|rf| rf.rel_err_op(x));
        let rel_fro = rel_fro.or_else(|| reference.as_ref().map(|rf| rf.rel_err_fro(x)));
        let phase = match (&instrument, &reference) {
            (Some(u_perp), Some(rf)) => {
                let dec = decompose_iterate_with(x, rf.ground_truth(), u_perp.clone())?;
                Some(phase_metrics(&dec, rf.ground_truth(), metric_lambda(f)))
            }
            _ => None,
        };
        records.push(Record {
            t,
            loss: f,
            rel_err_fro: rel_fro,
            rel_err_op: rel_op,
            phase,
            elapsed_ns: clock.elapsed().as_nanos(),
        });
        if config.checkpoints {
            checkpoints.push((t, x.clone()));
        }
        Ok(())
    };

    let target_hit = |x: &DMatrix<f64>| -> (bool, Option<f64>) {
        match (target, &reference) {
            (Some(eps), Some(rf)) => {
                let e = rf.rel_err_fro(x);
                (e <= eps, Some(e))
            }
            _ => (false, None),
        }
    };

    let (hit, rel) = target_hit(&x);
    record(0, &x, f, rel)?;
    let mut stop_reason = StopReason::MaxIters;
    let mut t = 0;
    if hit {
        stop_reason = StopReason::TargetReached;
    } else {
        let mut best = f;
        let mut last_improve = 0;
        while t < config.max_iters {
            t += 1;
            x = match config.algorithm {
                Algorithm::Gd => step_gd(&x, &grad, config.eta),
                Algorithm::ScaledGd => step_scaled_gd(&x, &grad, config.eta)?,
                Algorithm::ScaledGdLambda => {
                    step_scaled_gd_lambda(&x, &grad, config.eta, lambda.unwrap_or(0.0))?
                }
                Algorithm::PrecGd => step_prec_gd(&x, &grad, config.eta, f)?,
            };
            (f, grad) = loss_and_gradient(op, y, &x)?;
            if !f.is_finite() || f > limit {
                return Err(Error::Diverged { t, loss: f, limit });
            }
            let (hit, rel) = target_hit(&x);
            if t % config.record_every == 0 {
                record(t, &x, f, rel)?;
            }
            if hit {
                stop_reason = StopReason::TargetReached;
                break;
            }
            if let Some(patience) = config.stop.patience {
                if f < best * (1.0 - config.stop.improve_tol) {
                    best = f;
                    last_improve = t;
                } else if t - last_improve >= patience {
                    stop_reason = StopReason::Patience;
                    break;
                }
            }
        }
        if t % config.record_every != 0 {
            let (_, rel) = target_hit(&x);
            record(t, &x, f, rel)?;
        }
    }

    let final_errors = reference.as_ref().map(|rf| rf.errors(&x));
    Ok(Trajectory {
        records,
        stop_reason,
        final_state: IterateState {
            x,
            t,
            loss: f,
            elapsed_ns: clock.elapsed().as_nanos(),
        },
        lambda,
        final_errors,
        checkpoints,
    })
}
