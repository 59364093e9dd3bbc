//! Planted problem instances: exactly low-rank, approximately low-rank, and
//! the Gaussian noise model applied to measurements.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::orthonormal_complement;
use crate::error::{Error, Result};
use crate::linalg::{gram_deviation, qr_positive};
use crate::rng::StreamKey;

/// Stream id for the Gaussian draw behind `u_star`.
const BASIS_STREAM: u64 = 0;

/// How singular values of `X*` are spread between `1` and `1/κ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Spectrum {
    #[default]
    Linear,
    Geometric,
}

impl Spectrum {
    /// Non-increasing values from `1` down to exactly `1/kappa`.
    pub fn values(self, r_star: usize, kappa: f64) -> Vec<f64> {
        if r_star == 1 {
            return vec![1.0];
        }
        let last = r_star - 1;
        (0..r_star)
            .map(|i| {
                if i == last {
                    return 1.0 / kappa;
                }
                let frac = i as f64 / last as f64;
                match self {
                    Spectrum::Linear => 1.0 - frac * (1.0 - 1.0 / kappa),
                    Spectrum::Geometric => kappa.powf(-frac),
                }
            })
            .collect()
    }
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spectrum::Linear => "linear",
            Spectrum::Geometric => "geometric",
        })
    }
}

impl FromStr for Spectrum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Spectrum::Linear),
            "geometric" => Ok(Spectrum::Geometric),
            other => Err(Error::invalid(format!("unknown spectrum `{other}`"))),
        }
    }
}

/// The planted factor `X* = U* diag(σ*)` and `M* = X* X*ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    n: usize,
    u_star: DMatrix<f64>,
    sigma_star: DVector<f64>,
    seed: u64,
}

impl GroundTruth {
    /// Assembles a ground truth from explicit parts, checking orthonormality
    /// of `u_star` and the ordering of `sigma_star`.
    pub fn from_parts(u_star: DMatrix<f64>, sigma_star: DVector<f64>, seed: u64) -> Result<Self> {
        let n = u_star.nrows();
        let r_star = u_star.ncols();
        if n == 0 || r_star == 0 {
            return Err(Error::invalid("ground truth needs n >= 1 and r_star >= 1"));
        }
        if r_star > n {
            return Err(Error::invalid(format!("r_star = {r_star} exceeds n = {n}")));
        }
        if sigma_star.len() != r_star {
            return Err(Error::DimensionMismatch {
                what: "sigma_star length",
                expected: r_star,
                got: sigma_star.len(),
            });
        }
        let deviation = gram_deviation(&u_star);
        if deviation > 1e-10 {
            return Err(Error::NotOrthonormal { deviation });
        }
        if sigma_star.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("sigma_star entries must be positive and finite"));
        }
        if sigma_star.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("sigma_star must be non-increasing"));
        }
        Ok(GroundTruth {
            n,
            u_star,
            sigma_star,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_star(&self) -> usize {
        self.sigma_star.len()
    }

    pub fn u_star(&self) -> &DMatrix<f64> {
        &self.u_star
    }

    pub fn sigma_star(&self) -> &DVector<f64> {
        &self.sigma_star
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `σ_max / σ_min` of `X*`; 1 for a rank-one factor.
    pub fn condition_number(&self) -> f64 {
        self.sigma_star[0] / self.sigma_star[self.r_star() - 1]
    }

    pub fn x_star(&self) -> DMatrix<f64> {
        let mut x = self.u_star.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col *= self.sigma_star[j];
        }
        x
    }

    /// `‖M*‖ = σ_max²`.
    pub fn m_star_norm(&self) -> f64 {
        self.sigma_star[0] * self.sigma_star[0]
    }

    pub fn m_star_fro(&self) -> f64 {
        self.sigma_star.iter().map(|s| s.powi(4)).sum::<f64>().sqrt()
    }
}

pub fn make_ground_truth(n: usize, r_star: usize, kappa: f64, seed: u64) -> Result<GroundTruth> {
    make_ground_truth_with(n, r_star, kappa, Spectrum::Linear, seed)
}

pub fn make_ground_truth_with(
    n: usize,
    r_star: usize,
    kappa: f64,
    spectrum: Spectrum,
    seed: u64,
) -> Result<GroundTruth> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if r_star == 0 || r_star > n {
        return Err(Error::invalid(format!("r_star must lie in 1..={n}, got {r_star}")));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    let mut stream = StreamKey::new(seed).split(BASIS_STREAM).stream();
    let mut g = DMatrix::zeros(n, r_star);
    stream.fill_gaussian(g.as_mut_slice());
    let (u_star, _) = qr_positive(&g);
    let sigma_star = DVector::from_vec(spectrum.values(r_star, kappa));
    GroundTruth::from_parts(u_star, sigma_star, seed)
}

/// `U* diag(σ*²) U*ᵀ`, exactly symmetric.
pub fn dense_m_star(gt: &GroundTruth) -> DMatrix<f64> {
    let x = gt.x_star();
    let m = &x * x.transpose();
    (&m + m.transpose()) * 0.5
}

/// `M* = M_r + M'_r` with a geometrically decaying tail on the complement of
/// `U*`.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxTruth {
    base: GroundTruth,
    tail_spectrum: DVector<f64>,
    tail_basis: DMatrix<f64>,
}

impl ApproxTruth {
    pub fn base(&self) -> &GroundTruth {
        &self.base
    }

    pub fn tail_spectrum(&self) -> &DVector<f64> {
        &self.tail_spectrum
    }

    pub fn tail_basis(&self) -> &DMatrix<f64> {
        &self.tail_basis
    }

    /// Spectral norm of the residual `M'_r`.
    pub fn tail_norm(&self) -> f64 {
        self.tail_spectrum.iter().cloned().fold(0.0, f64::max)
    }

    pub fn tail_fro(&self) -> f64 {
        self.tail_spectrum.norm()
    }

    pub fn dense_tail(&self) -> DMatrix<f64> {
        let mut scaled = self.tail_basis.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.tail_spectrum[j];
        }
        let m = scaled * self.tail_basis.transpose();
        (&m + m.transpose()) * 0.5
    }

    pub fn dense(&self) -> DMatrix<f64> {
        dense_m_star(&self.base) + self.dense_tail()
    }
}

pub fn make_approx_truth(
    n: usize,
    r_star: usize,
    kappa: f64,
    tail_decay: f64,
    seed: u64,
) -> Result<ApproxTruth> {
    if !(tail_decay > 0.0 && tail_decay < 1.0) {
        return Err(Error::invalid(format!("tail_decay must lie in (0, 1), got {tail_decay}")));
    }
    let base = make_ground_truth(n, r_star, kappa, seed)?;
    let floor = base.sigma_star[r_star - 1].powi(2);
    let tail_spectrum =
        DVector::from_iterator(n - r_star, (1..=n - r_star).map(|k| floor * tail_decay.powi(k as i32)));
    let tail_basis = orthonormal_complement(base.u_star())?;
    Ok(ApproxTruth {
        base,
        tail_spectrum,
        tail_basis,
    })
}

/// Anything that can act as the target matrix of a sensing problem.
pub trait Truth {
    fn ground_truth(&self) -> &GroundTruth;
    fn dense(&self) -> DMatrix<f64>;
    /// `Some(X*)` when `M* = X* X*ᵀ` exactly.
    fn factor(&self) -> Option<DMatrix<f64>>;
}

impl Truth for GroundTruth {
    fn ground_truth(&self) -> &GroundTruth {
        self
    }

    fn dense(&self) -> DMatrix<f64> {
        dense_m_star(self)
    }

    fn factor(&self) -> Option<DMatrix<f64>> {
        Some(self.x_star())
    }
}

impl Truth for ApproxTruth {
    fn ground_truth(&self) -> &GroundTruth {
        &self.base
    }

    fn dense(&self) -> DMatrix<f64> {
        ApproxTruth::dense(self)
    }

    fn factor(&self) -> Option<DMatrix<f64>> {
        None
    }
}

/// i.i.d. `N(0, σ²)` measurement noise drawn from `seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(NoiseModel { sigma, seed })
    }

    pub fn noiseless() -> Self {
        NoiseModel { sigma: 0.0, seed: 0 }
    }
}
