//! Linear sensing operators on symmetric matrices.
//!
//! Matrices are handled in *scaled symmetric vectorization* (`svec`): the
//! upper triangle in row-major order with off-diagonal entries multiplied by
//! `√2`, so that `⟨A, M⟩_F = svec(A) · svec(M)`. A Gaussian-design operator
//! is then an `m × n(n+1)/2` array whose rows are `svec(A_i)`. Under the
//! design (diagonal variance `1/m`, off-diagonal variance `1/(2m)`) every
//! stored entry is an independent `N(0, 1/m)` draw.
//!
//! Row `i` of a Gaussian operator with seed `s` is, bit for bit,
//! `z_j / sqrt(m)` for `j = 0..n(n+1)/2` where `z_j` is the `j`-th Gaussian
//! of `StreamKey::new(s).split(i)` (see [`crate::rng`]). The dense backend
//! materializes these rows; the streamed backend regenerates them per call.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::qr_positive;
use crate::problem::{NoiseModel, Truth};
use crate::rng::StreamKey;

pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

/// Rows per work unit for the streamed backend's partial sums.
const STREAM_CHUNK: usize = 128;
/// Output columns per work unit for the dense adjoint.
const ADJOINT_BLOCK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Dense,
    Streamed,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Backend::Dense),
            "streamed" => Ok(Backend::Streamed),
            other => Err(Error::invalid(format!("unknown backend `{other}`"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Dense => "dense",
            Backend::Streamed => "streamed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    GaussianDense,
    GaussianStreamed,
    Identity,
    /// Rows supplied by the caller.
    Explicit,
}

#[derive(Clone, Debug)]
enum Storage {
    Dense(Vec<f64>),
    Streamed,
    Identity,
}

/// A linear map from symmetric `n × n` matrices to `ℝ^m`.
#[derive(Clone, Debug)]
pub struct SensingOperator {
    kind: OperatorKind,
    n: usize,
    m: usize,
    seed: u64,
    storage: Storage,
}

/// Length of `svec` for an `n × n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// `svec` of `(M + Mᵀ)/2`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        out.push(m[(j, j)]);
        for k in j + 1..n {
            out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(j, k)] + m[(k, j)]));
        }
    }
    out
}

/// Inverse of [`svec`]; the result is exactly symmetric.
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        m[(j, j)] = v[idx];
        idx += 1;
        for k in j + 1..n {
            let off = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
            m[(j, k)] = off;
            m[(k, j)] = off;
            idx += 1;
        }
    }
    m
}

/// Row `i` of the Gaussian design with the given seed, written into `out`.
pub fn gaussian_row(seed: u64, m: usize, i: usize, out: &mut [f64]) {
    let scale = 1.0 / (m as f64).sqrt();
    let mut stream = StreamKey::new(seed).split(i as u64).stream();
    for v in out.iter_mut() {
        *v = stream.next_gaussian() * scale;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gaussian-design operator.
pub fn gaussian_operator(n: usize, m: usize, seed: u64, backend: Backend) -> Result<SensingOperator> {
    gaussian_operator_with_cap(n, m, seed, backend, DEFAULT_MEMORY_CAP)
}

pub fn gaussian_operator_with_cap(
    n: usize,
    m: usize,
    seed: u64,
    backend: Backend,
    memory_cap: u64,
) -> Result<SensingOperator> {
    if n == 0 {
        return Err(Error::invalid("operator dimension n must be positive"));
    }
    if m == 0 {
        return Err(Error::invalid("number of measurements m must be positive"));
    }
    let d = svec_len(n);
    match backend {
        Backend::Streamed => Ok(SensingOperator {
            kind: OperatorKind::GaussianStreamed,
            n,
            m,
            seed,
            storage: Storage::Streamed,
        }),
        Backend::Dense => {
            let requested = m as u128 * d as u128 * 8;
            if requested > memory_cap as u128 {
                return Err(Error::MemoryCap {
                    requested,
                    cap: memory_cap as u128,
                });
            }
            let mut storage = vec![0.0; m * d];
            storage
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(i, row)| gaussian_row(seed, m, i, row));
            Ok(SensingOperator {
                kind: OperatorKind::GaussianDense,
                n,
                m,
                seed,
                storage: Storage::Dense(storage),
            })
        }
    }
}

/// The isometry `M ↦ svec(M)`; `𝒜*𝒜` is the identity.
pub fn identity_operator(n: usize) -> SensingOperator {
    SensingOperator {
        kind: OperatorKind::Identity,
        n,
        m: svec_len(n),
        seed: 0,
        storage: Storage::Identity,
    }
}

impl SensingOperator {
    /// Operator with the given sensing matrices (symmetrized).
    pub fn from_matrices(matrices: &[DMatrix<f64>]) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::invalid("need at least one sensing matrix"))?;
        let n = first.nrows();
        let mut storage = Vec::with_capacity(matrices.len() * svec_len(n));
        for a in matrices {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: "sensing matrix size",
                    expected: n,
                    got: a.nrows().max(a.ncols()),
                });
            }
            storage.extend(svec(a));
        }
        Ok(SensingOperator {
            kind: OperatorKind::Explicit,
            n,
            m: matrices.len(),
            seed: 0,
            storage: Storage::Dense(storage),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn svec_len(&self) -> usize {
        svec_len(self.n)
    }

    fn check_square(&self, mat: &DMatrix<f64>) -> Result<()> {
        if mat.nrows() != self.n || mat.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                what: "matrix size",
                expected: self.n,
                got: if mat.nrows() != self.n { mat.nrows() } else { mat.ncols() },
            });
        }
        Ok(())
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "measurement vector length",
                expected: self.m,
                got: y.len(),
            });
        }
        Ok(())
    }

    /// `y_i = ⟨A_i, M⟩` for `M` given in `svec` form.
    pub fn forward_svec(&self, v: &[f64]) -> Vec<f64> {
        let d = self.svec_len();
        debug_assert_eq!(v.len(), d);
        match &self.storage {
            Storage::Identity => v.to_vec(),
            Storage::Dense(rows) => rows.par_chunks(d).map(|row| dot(row, v)).collect(),
            Storage::Streamed => (0..self.m)
                .into_par_iter()
                .map_init(
                    || vec![0.0; d],
                    |row, i| {
                        gaussian_row(self.seed, self.m, i, row);
                        dot(row, v)
                    },
                )
                .collect(),
        }
    }

    /// `svec(Σ y_i A_i)`.
    pub fn adjoint_svec(&self, y: &[f64]) -> Vec<f64> {
        let d = self.svec_len();
        debug_assert_eq!(y.len(), self.m);
        match &self.storage {
            Storage::Identity => y.to_vec(),
            Storage::Dense(rows) => {
                let mut out = vec![0.0; d];
                out.par_chunks_mut(ADJOINT_BLOCK)
                    .enumerate()
                    .for_each(|(b, block)| {
                        let start = b * ADJOINT_BLOCK;
                        for (i, &yi) in y.iter().enumerate() {
                            let row = &rows[i * d + start..i * d + start + block.len()];
                            axpy(yi, row, block);
                        }
                    });
                out
            }
            Storage::Streamed => self.streamed_reduce(|_, i| y[i]),
        }
    }

    /// Chunked sum of `w_i · row_i` with `w_i = weight(row_i, i)`, with the
    /// chunk partials combined in index order. Returns the weights as well.
    fn reduce_rows<F>(&self, weight: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(&[f64], usize) -> f64 + Sync,
    {
        let d = self.svec_len();
        let chunks = self.m.div_ceil(STREAM_CHUNK);
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let rows = c * STREAM_CHUNK..((c + 1) * STREAM_CHUNK).min(self.m);
                let mut scratch = Vec::new();
                let mut acc = vec![0.0; d];
                let mut weights = Vec::with_capacity(rows.len());
                for i in rows {
                    let row: &[f64] = match &self.storage {
                        Storage::Dense(all) => &all[i * d..(i + 1) * d],
                        _ => {
                            scratch.resize(d, 0.0);
                            gaussian_row(self.seed, self.m, i, &mut scratch);
                            &scratch
                        }
                    };
                    let w = weight(row, i);
                    axpy(w, row, &mut acc);
                    weights.push(w);
                }
                (weights, acc)
            })
            .collect();
        let mut weights = Vec::with_capacity(self.m);
        let mut out = vec![0.0; d];
        for (w, p) in &partials {
            weights.extend_from_slice(w);
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        (weights, out)
    }

    fn streamed_reduce<F>(&self, weight: F) -> Vec<f64>
    where
        F: Fn(&[f64], usize) -> f64 + Sync,
    {
        self.reduce_rows(weight).1
    }

    /// `svec(𝒜*𝒜(M))`; the streamed backend generates each row once.
    pub fn normal_svec(&self, v: &[f64]) -> Vec<f64> {
        match &self.storage {
            Storage::Streamed => self.streamed_reduce(|row, _| dot(row, v)),
            _ => self.adjoint_svec(&self.forward_svec(v)),
        }
    }

    /// Residual `r = 𝒜(M) − y` and `svec(𝒜*(r))` in a single pass over
    /// the rows, for `M` given in `svec` form.
    pub fn residual_adjoint_svec(&self, v: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(v.len(), self.svec_len());
        debug_assert_eq!(y.len(), self.m);
        match &self.storage {
            Storage::Identity => {
                let r: Vec<f64> = v.iter().zip(y).map(|(a, b)| a - b).collect();
                (r.clone(), r)
            }
            _ => self.reduce_rows(|row, i| dot(row, v) - y[i]),
        }
    }

    pub fn apply_forward(&self, mat: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_square(mat)?;
        Ok(DVector::from_vec(self.forward_svec(&svec(mat))))
    }

    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(y.as_slice())?;
        Ok(smat(&self.adjoint_svec(y.as_slice()), self.n))
    }

    pub fn apply_normal(&self, mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_square(mat)?;
        if let Storage::Identity = self.storage {
            return Ok(crate::linalg::symmetrize(mat));
        }
        Ok(smat(&self.normal_svec(&svec(mat)), self.n))
    }
}

/// Observed measurements `y = 𝒜(M*) + ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    pub y: DVector<f64>,
    pub sigma: f64,
    pub seed_noise: u64,
}

pub fn measure(op: &SensingOperator, truth: &dyn Truth, noise: &NoiseModel) -> Result<Measurements> {
    let mut y = op.apply_forward(&truth.dense())?;
    if noise.sigma > 0.0 {
        let mut stream = StreamKey::new(noise.seed).stream();
        for v in y.iter_mut() {
            *v += noise.sigma * stream.next_gaussian();
        }
    }
    Ok(Measurements {
        y,
        sigma: noise.sigma,
        seed_noise: noise.seed,
    })
}

/// Sampled restricted-isometry statistics. `delta_hat` is a lower bound on
/// the true constant; values `>= 1` mean the sampled ratios already rule out
/// RIP at this rank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RipEstimate {
    pub rank: usize,
    pub trials: usize,
    pub delta_hat: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Random symmetric rank-`rank` matrix with unit Frobenius norm:
/// `Q Λ Qᵀ`, `Q` a random orthonormal frame and `Λ` random signs times
/// uniform magnitudes.
pub fn random_low_rank_symmetric(n: usize, rank: usize, key: StreamKey) -> DMatrix<f64> {
    let mut stream = key.stream();
    let mut g = DMatrix::zeros(n, rank);
    stream.fill_gaussian(g.as_mut_slice());
    let (q, _) = qr_positive(&g);
    let lambda: Vec<f64> = (0..rank)
        .map(|_| {
            let sign = if stream.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
            sign * stream.next_open01()
        })
        .collect();
    let norm = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lambda[j] / norm;
    }
    let m = scaled * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn estimate_rip_constant(
    op: &SensingOperator,
    rank: usize,
    trials: usize,
    seed: u64,
) -> Result<RipEstimate> {
    if rank == 0 || rank > op.n() {
        return Err(Error::invalid(format!("rank must lie in 1..={}, got {rank}", op.n())));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let root = StreamKey::new(seed);
    let (mut min_ratio, mut max_ratio) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..trials {
        let mat = random_low_rank_symmetric(op.n(), rank, root.split(t as u64));
        let v = svec(&mat);
        let fro2: f64 = v.iter().map(|x| x * x).sum();
        let ratio = op.forward_svec(&v).iter().map(|x| x * x).sum::<f64>() / fro2;
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
    }
    Ok(RipEstimate {
        rank,
        trials,
        delta_hat: (1.0 - min_ratio).max(max_ratio - 1.0).max(0.0),
        min_ratio,
        max_ratio,
    })
}
