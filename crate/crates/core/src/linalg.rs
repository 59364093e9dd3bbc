//! Small dense helpers on top of nalgebra with deterministic sign conventions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest dimension at which spectral norms use a dense eigensolve.
pub const DENSE_EIGEN_MAX_DIM: usize = 64;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 1000;

/// Thin QR with the diagonal of `R` made non-negative.
pub fn qr_positive(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows().min(r.ncols()) {
        if r[(j, j)] < 0.0 {
            r.row_mut(j).neg_mut();
            q.column_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Flips each column so that its largest-magnitude entry is positive.
/// Ties go to the lowest index.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition, eigenvalues sorted descending and
/// eigenvectors sign-fixed with [`fix_column_signs`].
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Outcome of a power-iteration spectral norm estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerInfo {
    pub iters: usize,
    pub tol: f64,
    pub converged: bool,
}

/// Spectral norm of a symmetric matrix.
///
/// Dense eigensolve for `n <= 64`, otherwise power iteration from the
/// normalized all-ones vector tracking `‖E v‖` until its relative change
/// drops below [`POWER_TOL`].
pub fn spectral_norm_sym(e: &DMatrix<f64>) -> (f64, PowerInfo) {
    let n = e.nrows();
    if n == 0 {
        return (0.0, PowerInfo { iters: 0, tol: POWER_TOL, converged: true });
    }
    if n <= DENSE_EIGEN_MAX_DIM {
        let eig = SymmetricEigen::new(symmetrize(e));
        let norm = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        return (norm, PowerInfo { iters: 0, tol: 0.0, converged: true });
    }
    power_iteration_sym(e, POWER_TOL, POWER_MAX_ITERS)
}

pub fn power_iteration_sym(e: &DMatrix<f64>, tol: f64, max_iters: usize) -> (f64, PowerInfo) {
    let n = e.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for it in 1..=max_iters {
        let w = e * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return (0.0, PowerInfo { iters: it, tol, converged: true });
        }
        let change = (norm - estimate).abs();
        estimate = norm;
        v = w / norm;
        if change <= tol * norm {
            return (estimate, PowerInfo { iters: it, tol, converged: true });
        }
    }
    (estimate, PowerInfo { iters: max_iters, tol, converged: false })
}

/// Spectral norm of a general (small) matrix via SVD.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value of a general (small) matrix; zero for empty input.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Largest absolute deviation of `qᵀq` from the identity.
pub fn gram_deviation(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_has_positive_diagonal() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 4.0, 5.0, -6.0]);
        let (q, r) = qr_positive(&a);
        for j in 0..2 {
            assert!(r[(j, j)] > 0.0);
        }
        assert!(gram_deviation(&q) < 1e-14);
        assert!((q * r - a).norm() < 1e-13);
    }

    #[test]
    fn eigen_sorted_and_sign_fixed() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!((vals[0] - 3.0).abs() < 1e-14);
        assert!((vals[1] + 1.0).abs() < 1e-14);
        for col in vecs.column_iter() {
            let top = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(top > 0.0);
        }
    }

    #[test]
    fn power_iteration_matches_dense() {
        let n = 80;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 3.0 } else { 0.0 };
            }
        }
        let m = symmetrize(&m);
        let (power, info) = spectral_norm_sym(&m);
        let eig = SymmetricEigen::new(m.clone());
        let dense = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(info.iters > 0);
        assert!((power - dense).abs() <= 1e-8 * dense, "{power} vs {dense}");
    }

    #[test]
    fn opposite_sign_extremes() {
        // ±2 eigenvalues: Rayleigh quotients oscillate but ‖Ev‖ does not.
        let n = 70;
        let mut m = DMatrix::zeros(n, n);
        m[(0, 0)] = 2.0;
        m[(1, 1)] = -2.0;
        m[(2, 2)] = 1.0;
        let (norm, _) = spectral_norm_sym(&m);
        assert!((norm - 2.0).abs() < 1e-9);
    }
}
