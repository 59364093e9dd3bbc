//! Analysis-side quantities measured on iterates: the signal /
//! misalignment / overparameterization split of `X_t`, the scalar phase
//! metrics built from it, reconstruction errors, and the sensing deviation
//! `Δ_t = (ℐ − 𝒜*𝒜)(X_t X_tᵀ − M*)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    fix_column_signs, gram_deviation, min_singular_value, qr_positive, spectral_norm,
    spectral_norm_sym, sym_eigen_desc, PowerInfo,
};
use crate::problem::{GroundTruth, Truth};
use crate::sensing::SensingOperator;

/// Largest `n` for which [`delta_norm`] forms the dense residual.
pub const DELTA_MAX_DIM: usize = 2000;

/// Orthonormal basis of the orthogonal complement of `range(u)`.
///
/// Taken from the trailing columns of the full QR (positive `R` diagonal)
/// of `[u | I_n]`, so the result depends only on `u`.
pub fn orthonormal_complement(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = u.shape();
    let deviation = gram_deviation(u);
    if deviation > 1e-10 {
        return Err(Error::NotOrthonormal { deviation });
    }
    if k == n {
        return Ok(DMatrix::zeros(n, 0));
    }
    let mut aug = DMatrix::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(u);
    aug.columns_mut(k, n).fill_with_identity();
    let (q, _) = qr_positive(&aug);
    Ok(q.columns(k, n - k).into_owned())
}

/// `X_t = U* S̃ Vᵀ + U*⊥ Ñ Vᵀ + U*⊥ Õ V⊥ᵀ`.
#[derive(Clone, Debug)]
pub struct IterateDecomposition {
    /// `r* × r*` signal block.
    pub s_tilde: DMatrix<f64>,
    /// `(n − r*) × r*` misalignment block.
    pub n_tilde: DMatrix<f64>,
    /// `(n − r*) × (r − r*)` overparameterization block.
    pub o_tilde: DMatrix<f64>,
    /// `r × r*`, right singular vectors of `U*ᵀ X_t`.
    pub v: DMatrix<f64>,
    /// `r × (r − r*)`.
    pub v_perp: DMatrix<f64>,
    /// The complement `U*⊥` used for the split.
    pub u_perp: DMatrix<f64>,
}

impl IterateDecomposition {
    /// Reassembles `X_t` from the three blocks.
    pub fn reconstruct(&self, u_star: &DMatrix<f64>) -> DMatrix<f64> {
        let vt = self.v.transpose();
        u_star * &self.s_tilde * &vt
            + &self.u_perp * &self.n_tilde * &vt
            + &self.u_perp * &self.o_tilde * self.v_perp.transpose()
    }
}

pub fn decompose_iterate(x: &DMatrix<f64>, gt: &GroundTruth) -> Result<IterateDecomposition> {
    let u_perp = orthonormal_complement(gt.u_star())?;
    decompose_iterate_with(x, gt, u_perp)
}

/// As [`decompose_iterate`] with a caller-chosen complement `U*⊥`.
pub fn decompose_iterate_with(
    x: &DMatrix<f64>,
    gt: &GroundTruth,
    u_perp: DMatrix<f64>,
) -> Result<IterateDecomposition> {
    let (n, r) = x.shape();
    let r_star = gt.r_star();
    if n != gt.n() {
        return Err(Error::DimensionMismatch {
            what: "iterate rows",
            expected: gt.n(),
            got: n,
        });
    }
    if r < r_star {
        return Err(Error::invalid(format!(
            "decomposition needs r >= r_star ({r} < {r_star})"
        )));
    }
    if u_perp.shape() != (n, n - r_star) {
        return Err(Error::DimensionMismatch {
            what: "complement columns",
            expected: n - r_star,
            got: u_perp.ncols(),
        });
    }
    let s = gt.u_star().transpose() * x;
    let n_full = u_perp.transpose() * x;
    let v = right_singular_frame(&s);
    let v_perp = orthonormal_complement(&v)?;
    Ok(IterateDecomposition {
        s_tilde: &s * &v,
        n_tilde: &n_full * &v,
        o_tilde: &n_full * &v_perp,
        v,
        v_perp,
        u_perp,
    })
}

/// `r × k` right singular vectors of a `k × r` matrix (`k <= r`), ordered by
/// descending singular value, each sign-fixed so its largest entry is
/// positive.
fn right_singular_frame(s: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, r) = s.shape();
    let svd = s.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut v = DMatrix::zeros(r, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        v.set_column(dst, &vt.row(src).transpose());
    }
    if gram_deviation(&v) > 1e-12 {
        // Degenerate S: fall back to eigenvectors of SᵀS, which are always
        // orthonormal.
        let (_, vecs) = sym_eigen_desc(&(s.transpose() * s));
        v = vecs.columns(0, k).into_owned();
    }
    fix_column_signs(&mut v);
    v
}

/// Scalar summaries of an [`IterateDecomposition`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseMetrics {
    /// `σ_min((Σ*² + λI)^{-1/2} S̃)`.
    pub sigma_min_scaled: f64,
    /// `‖Ñ S̃⁻¹ Σ*‖`; `+∞` when `S̃` is numerically singular.
    pub misalign: f64,
    pub misalign_singular: bool,
    /// `‖Σ*⁻¹ (S̃ S̃ᵀ − Σ*²) Σ*⁻¹‖`.
    pub gamma_norm: f64,
    /// `‖Õ‖`, exactly zero when `r = r*`.
    pub overparam_norm: f64,
    /// `‖S̃‖`.
    pub signal_norm: f64,
}

pub fn phase_metrics(dec: &IterateDecomposition, gt: &GroundTruth, lambda: f64) -> PhaseMetrics {
    let sigma = gt.sigma_star();
    let k = sigma.len();
    let s = &dec.s_tilde;

    let mut scaled = s.clone();
    for i in 0..k {
        let w = 1.0 / (sigma[i] * sigma[i] + lambda).sqrt();
        scaled.row_mut(i).scale_mut(w);
    }
    let sigma_min_scaled = min_singular_value(&scaled);

    let sv = s.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    // S̃ inherits rounding from U*ᵀX, so judge its rank against the whole iterate.
    let scale = smax.max(dec.n_tilde.norm()).max(dec.o_tilde.norm());
    let singular = smax == 0.0 || smin <= f64::EPSILON * gt.n() as f64 * scale;
    let misalign = if singular {
        f64::INFINITY
    } else {
        // Ñ S̃⁻¹ = (S̃⁻ᵀ Ñᵀ)ᵀ
        match s.transpose().lu().solve(&dec.n_tilde.transpose()) {
            Some(z) => {
                let mut m = z.transpose();
                for (j, mut col) in m.column_iter_mut().enumerate() {
                    col *= sigma[j];
                }
                spectral_norm(&m)
            }
            None => f64::INFINITY,
        }
    };

    let inv = DVector::from_iterator(k, sigma.iter().map(|v| 1.0 / v));
    let mut gamma = s * s.transpose();
    for i in 0..k {
        gamma[(i, i)] -= sigma[i] * sigma[i];
    }
    for i in 0..k {
        for j in 0..k {
            gamma[(i, j)] *= inv[i] * inv[j];
        }
    }

    PhaseMetrics {
        sigma_min_scaled,
        misalign,
        misalign_singular: misalign.is_infinite(),
        gamma_norm: spectral_norm(&gamma),
        overparam_norm: spectral_norm(&dec.o_tilde),
        signal_norm: spectral_norm(s),
    }
}

/// Target matrix cached for repeated error evaluation.
#[derive(Clone, Debug)]
pub struct Reference {
    dense: DMatrix<f64>,
    factor: Option<DMatrix<f64>>,
    truth: GroundTruth,
    norm: f64,
}

impl Reference {
    pub fn new(truth: &dyn Truth) -> Self {
        let dense = truth.dense();
        let factor = truth.factor();
        let norm = match &factor {
            Some(_) => truth.ground_truth().m_star_norm(),
            None => spectral_norm_sym(&dense).0,
        };
        Reference {
            dense,
            factor,
            truth: truth.ground_truth().clone(),
            norm,
        }
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    /// `‖M*‖`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = x * x.transpose();
        r -= &self.dense;
        r
    }

    /// `‖X Xᵀ − M*‖_F / ‖M*‖`.
    pub fn rel_err_fro(&self, x: &DMatrix<f64>) -> f64 {
        self.residual(x).norm() / self.norm
    }

    /// `‖X Xᵀ − M*‖ / ‖M*‖`.
    pub fn rel_err_op(&self, x: &DMatrix<f64>) -> f64 {
        let abs = match &self.factor {
            Some(xs) => low_rank_difference_norm(x, xs),
            None => spectral_norm_sym(&self.residual(x)).0,
        };
        abs / self.norm
    }

    pub fn errors(&self, x: &DMatrix<f64>) -> (f64, f64) {
        (self.rel_err_fro(x), self.rel_err_op(x))
    }
}

/// `‖A Aᵀ − B Bᵀ‖` through the thin QR of `[A | B]`: the nonzero spectrum
/// of the difference is that of `R₁R₁ᵀ − R₂R₂ᵀ`.
fn low_rank_difference_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let (ka, kb) = (a.ncols(), b.ncols());
    if ka + kb > n {
        let diff = a * a.transpose() - b * b.transpose();
        return spectral_norm_sym(&diff).0;
    }
    let mut stacked = DMatrix::zeros(n, ka + kb);
    stacked.columns_mut(0, ka).copy_from(a);
    stacked.columns_mut(ka, kb).copy_from(b);
    let (_, r) = qr_positive(&stacked);
    let r1 = r.columns(0, ka);
    let r2 = r.columns(ka, kb);
    let core = r1 * r1.transpose() - r2 * r2.transpose();
    let (vals, _) = sym_eigen_desc(&core);
    vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Relative Frobenius and spectral reconstruction errors.
pub fn reconstruction_error(x: &DMatrix<f64>, truth: &dyn Truth) -> (f64, f64) {
    Reference::new(truth).errors(x)
}

/// Spectral norm of `Δ = (ℐ − 𝒜*𝒜)(X Xᵀ − M*)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaNorm {
    pub value: f64,
    pub method: PowerInfo,
}

pub fn delta_norm(op: &SensingOperator, x: &DMatrix<f64>, truth: &dyn Truth) -> Result<DeltaNorm> {
    let n = x.nrows();
    if n > DELTA_MAX_DIM {
        return Err(Error::invalid(format!(
            "delta_norm forms a dense {n}x{n} residual; limit is {DELTA_MAX_DIM}"
        )));
    }
    let mut residual = x * x.transpose();
    residual -= truth.dense();
    let e = &residual - op.apply_normal(&residual)?;
    let (value, method) = spectral_norm_sym(&e);
    Ok(DeltaNorm { value, method })
}
