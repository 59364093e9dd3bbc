use proptest::prelude::*;
use scaledgd::rng::StreamKey;
use scaledgd::sensing::{smat, svec};
use scaledgd::solver::{loss_and_gradient, step_gd, step_prec_gd, step_scaled_gd_lambda};
use scaledgd::*;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    StreamKey::new(seed).stream().fill_gaussian(m.as_mut_slice());
    m
}

fn symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian(n, n, seed);
    (&g + g.transpose()) * 0.5
}

fn orthogonal(r: usize, seed: u64) -> DMatrix<f64> {
    gaussian(r, r, seed).qr().q()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adjoint_identity_all_backends(n in 1usize..9, m in 1usize..60, seed in any::<u64>()) {
        let mat = symmetric(n, seed ^ 1);
        let y = DVector::from_vec(gaussian(m, 1, seed ^ 2).as_slice().to_vec());
        for backend in [Backend::Dense, Backend::Streamed] {
            let op = gaussian_operator(n, m, seed, backend).unwrap();
            let lhs = op.apply_forward(&mat).unwrap().dot(&y);
            let rhs = mat.dot(&op.apply_adjoint(&y).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * mat.norm() * y.norm());
        }
    }

    #[test]
    fn backends_agree_bitwise_on_forward(n in 1usize..8, m in 1usize..300, seed in any::<u64>()) {
        let mat = symmetric(n, seed.wrapping_add(7));
        let dense = gaussian_operator(n, m, seed, Backend::Dense).unwrap();
        let streamed = gaussian_operator(n, m, seed, Backend::Streamed).unwrap();
        prop_assert_eq!(dense.apply_forward(&mat).unwrap(), streamed.apply_forward(&mat).unwrap());
        let a = dense.apply_normal(&mat).unwrap();
        let b = streamed.apply_normal(&mat).unwrap();
        prop_assert!(rel(&a, &b) <= 1e-12);
    }

    #[test]
    fn svec_is_an_isometry(n in 1usize..10, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let b = symmetric(n, !seed);
        let (va, vb) = (svec(&a), svec(&b));
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        prop_assert!((dot - a.dot(&b)).abs() <= 1e-12 * a.norm() * b.norm());
        prop_assert!(rel(&smat(&va, n), &a) <= 1e-15);
    }

    #[test]
    fn reassembly(n in 4usize..16, r_star in 1usize..4, extra in 0usize..4, seed in any::<u64>()) {
        let gt = make_ground_truth(n, r_star, 3.0, seed).unwrap();
        let r = (r_star + extra).min(n);
        let x = gaussian(n, r, seed ^ 0xabc);
        let dec = decompose_iterate(&x, &gt).unwrap();
        prop_assert!((dec.reconstruct(gt.u_star()) - &x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn exact_parameterization_has_no_overparam_block(n in 3usize..14, r in 1usize..4, seed in any::<u64>()) {
        let r = r.min(n);
        let gt = make_ground_truth(n, r, 2.0, seed).unwrap();
        let dec = decompose_iterate(&gaussian(n, r, seed ^ 5), &gt).unwrap();
        prop_assert_eq!(dec.o_tilde.ncols(), 0);
        prop_assert_eq!(phase_metrics(&dec, &gt, 0.1).overparam_norm, 0.0);
    }

    #[test]
    fn decomposition_is_rotation_invariant(n in 5usize..12, seed in any::<u64>()) {
        let gt = make_ground_truth(n, 2, 4.0, seed).unwrap();
        let x = gaussian(n, 4, seed ^ 9);
        let q = orthogonal(4, seed ^ 11);
        let a = phase_metrics(&decompose_iterate(&x, &gt).unwrap(), &gt, 0.05);
        let b = phase_metrics(&decompose_iterate(&(&x * q), &gt).unwrap(), &gt, 0.05);
        prop_assert!((a.sigma_min_scaled - b.sigma_min_scaled).abs() <= 1e-9);
        prop_assert!((a.gamma_norm - b.gamma_norm).abs() <= 1e-9 * a.gamma_norm.max(1.0));
        prop_assert!((a.overparam_norm - b.overparam_norm).abs() <= 1e-9 * a.overparam_norm.max(1.0));
    }

    #[test]
    fn gd_limit_bound(n in 3usize..8, r in 1usize..4, seed in any::<u64>()) {
        let x = gaussian(n, r, seed) * 0.1;
        let g = gaussian(n, r, !seed);
        let gram = crate_spectral_norm(&(x.transpose() * &x));
        let (eta, lambda) = (0.2, 10.0 * gram.max(1e-3));
        let a = step_scaled_gd_lambda(&x, &g, eta * lambda, lambda).unwrap();
        let b = step_gd(&x, &g, eta);
        let bound = eta * crate_spectral_norm(&g) * gram / (lambda - gram) * (1.0 + 1e-9) + 1e-15;
        prop_assert!(crate_spectral_norm(&(a - b)) <= bound);
    }

    #[test]
    fn minimax_is_homogeneous(sigma in 0.0f64..10.0, n in 1usize..500, r in 1usize..10) {
        let a = experiments::minimax_reference(2.0 * sigma, n, r);
        prop_assert_eq!(a, 2.0 * experiments::minimax_reference(sigma, n, r));
    }

    #[test]
    fn random_init_is_linear_in_alpha(n in 1usize..20, r in 1usize..6, alpha in 1e-30f64..1e3, seed in any::<u64>()) {
        let one = random_init(n, r, 1.0, seed).unwrap();
        let scaled = random_init(n, r, alpha, seed).unwrap();
        prop_assert_eq!(scaled, one * alpha);
    }

    #[test]
    fn float_format_round_trips(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        let back: f64 = io::fmt_f64(v).parse().unwrap();
        prop_assert_eq!(back.to_bits(), v.to_bits());
    }
}

fn crate_spectral_norm(m: &DMatrix<f64>) -> f64 {
    scaledgd::linalg::spectral_norm(m)
}

#[test]
fn gradient_matches_finite_differences() {
    for trial in 0..20u64 {
        let (n, r, m) = (6, 2, 40);
        let op = gaussian_operator(n, m, 100 + trial, Backend::Dense).unwrap();
        let gt = make_ground_truth(n, 2, 2.0, 200 + trial).unwrap();
        let y = measure(&op, &gt, &NoiseModel::noiseless()).unwrap().y;
        let x = gaussian(n, r, 300 + trial);
        let (_, grad) = loss_and_gradient(&op, y.as_slice(), &x).unwrap();
        let h = 1e-5 * x.norm();
        let mut fd = DMatrix::zeros(n, r);
        for i in 0..n {
            for j in 0..r {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(i, j)] += h;
                xm[(i, j)] -= h;
                let fp = loss(&op, y.as_slice(), &xp).unwrap();
                let fm = loss(&op, y.as_slice(), &xm).unwrap();
                fd[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        assert!(rel(&fd, &grad) <= 1e-6, "trial {trial}: {}", rel(&fd, &grad));
    }
}

#[test]
fn truth_is_a_fixed_point_of_every_step() {
    let op = gaussian_operator(10, 200, 3, Backend::Dense).unwrap();
    let gt = make_ground_truth(10, 2, 3.0, 4).unwrap();
    let y = measure(&op, &gt, &NoiseModel::noiseless()).unwrap().y;
    let x = gt.x_star();
    let (f, g) = loss_and_gradient(&op, y.as_slice(), &x).unwrap();
    assert!(g.norm() <= 1e-12);
    for next in [
        step_gd(&x, &g, 0.3),
        step_scaled_gd_lambda(&x, &g, 0.3, 0.01).unwrap(),
        step_prec_gd(&x, &g, 0.3, f).unwrap(),
    ] {
        assert!((next - &x).norm() <= 1e-12);
    }
}

#[test]
fn rotation_equivariance_over_fifty_iterations() {
    let n = 20;
    let op = gaussian_operator(n, 400, 8, Backend::Dense).unwrap();
    let gt = make_ground_truth(n, 2, 3.0, 9).unwrap();
    let y = measure(&op, &gt, &NoiseModel::noiseless()).unwrap().y;
    let x0 = random_init(n, 4, 0.1, 10).unwrap();
    let q = orthogonal(4, 12);
    for alg in Algorithm::ALL {
        let mut a = x0.clone();
        let mut b = &x0 * &q;
        for t in 0..50 {
            let (fa, ga) = loss_and_gradient(&op, y.as_slice(), &a).unwrap();
            let (fb, gb) = loss_and_gradient(&op, y.as_slice(), &b).unwrap();
            (a, b) = match alg {
                Algorithm::Gd => (step_gd(&a, &ga, 0.3), step_gd(&b, &gb, 0.3)),
                Algorithm::ScaledGdLambda => (
                    step_scaled_gd_lambda(&a, &ga, 0.3, 0.02).unwrap(),
                    step_scaled_gd_lambda(&b, &gb, 0.3, 0.02).unwrap(),
                ),
                Algorithm::ScaledGd => (
                    step_scaled_gd_lambda(&a, &ga, 0.3, 0.0).unwrap(),
                    step_scaled_gd_lambda(&b, &gb, 0.3, 0.0).unwrap(),
                ),
                Algorithm::PrecGd => (
                    step_prec_gd(&a, &ga, 0.3, fa).unwrap(),
                    step_prec_gd(&b, &gb, 0.3, fb).unwrap(),
                ),
            };
            let (ma, mb) = (&a * a.transpose(), &b * b.transpose());
            assert!(rel(&mb, &ma) <= 1e-9, "{alg} t={t}: {}", rel(&mb, &ma));
        }
    }
}

#[test]
fn normal_operator_is_unbiased() {
    let n = 4;
    let mat = symmetric(n, 77);
    let mut acc = DMatrix::zeros(n, n);
    let ops = 10_000;
    for s in 0..ops {
        let op = gaussian_operator(n, 10, 1000 + s, Backend::Streamed).unwrap();
        acc += op.apply_normal(&mat).unwrap();
    }
    acc /= ops as f64;
    assert!(rel(&acc, &mat) <= 0.05, "{}", rel(&acc, &mat));
}

#[test]
fn rip_sanity_and_identity() {
    let id = estimate_rip_constant(&identity_operator(6), 3, 50, 1).unwrap();
    assert_eq!(id.delta_hat, 0.0);
    let op = gaussian_operator(12, 600, 2, Backend::Dense).unwrap();
    let est = estimate_rip_constant(&op, 2, 100, 3).unwrap();
    assert!(est.delta_hat < 0.5, "{est:?}");
    assert!(est.min_ratio <= est.max_ratio);
}

#[test]
fn delta_norm_is_bounded_by_rip_scale() {
    let n = 30;
    let op = gaussian_operator(n, 3000, 5, Backend::Dense).unwrap();
    let gt = make_ground_truth(n, 2, 2.0, 6).unwrap();
    let x = gaussian(n, 3, 7) * 0.3;
    let rip = estimate_rip_constant(&op, 5, 50, 8).unwrap();
    let residual = &x * x.transpose() - dense_m_star(&gt);
    let d = delta_norm(&op, &x, &gt).unwrap();
    assert!(d.value <= 10.0 * 2.0 * rip.delta_hat.max(0.05) * residual.norm());
    assert!(delta_norm(&identity_operator(n), &x, &gt).unwrap().value <= 1e-14);
}
