use dlab::dichotomy::{certify, CertifyOptions, DichotomyCertificate};
use dlab::linalg::{Mat, ProjectionMatrix};
use dlab::linearize::*;
use dlab::propagate::uniform_grid;
use dlab::system::{palmer_demo, QuasilinearSystem};
use dlab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn palmer_cert(q: &QuasilinearSystem) -> DichotomyCertificate {
    let p = ProjectionMatrix::new(Mat::identity(1, 1), 1e-12).unwrap();
    certify(&q.linear, &p, (-6.0, 6.0), &uniform_grid(-6.0, 6.0, 0.1, None), &CertifyOptions::default()).unwrap()
}

fn probes(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.random_range(0.0..10.0), rng.random_range(-2.0..2.0))).collect()
}

#[test]
fn half_line_maps_are_inverse_conjugacies() {
    let q = palmer_demo();
    let ctx = make_context(&q, &palmer_cert(&q), 1e-6, LinearizationMode::HalfLinePlus).unwrap();
    for (t, p) in probes(20, 1) {
        assert!(inverse_residual(&ctx, t, &[p]).unwrap() <= 1e-5);
        let h = eval_h(&ctx, t, &[p]).unwrap();
        assert!(h.iterations <= 10, "{} iterations", h.iterations);
        assert!(h.displacement() <= ctx.displacement_bound() + 1e-5);
        assert!(conjugacy_residual(&ctx, t, &[p], 5.0).unwrap() <= 5e-5);
    }
}

#[test]
fn g_jacobian_matches_finite_differences() {
    let q = palmer_demo();
    let ctx = make_context(&q, &palmer_cert(&q), 1e-8, LinearizationMode::HalfLinePlus).unwrap();
    for (t, p) in probes(10, 2) {
        let jac = g_jacobian(&ctx, t, &[p]).unwrap();
        let d = 1e-4;
        let fd = (eval_g(&ctx, t, &[p + d]).unwrap().output[0] - eval_g(&ctx, t, &[p - d]).unwrap().output[0]) / (2.0 * d);
        assert!(jac.determinant > 0.0);
        assert!((jac.matrix[(0, 0)] - fd).abs() <= 1e-4, "t = {t}: {} vs {fd}", jac.matrix[(0, 0)]);
        // Lipschitz bound of G(t, .)
        assert!(jac.matrix[(0, 0)].abs() <= ctx.theta(t));
    }
}

#[test]
fn full_line_maps_agree_with_fixed_point_theory() {
    let q = palmer_demo();
    let ctx = make_context(&q, &palmer_cert(&q), 1e-6, LinearizationMode::FullLine).unwrap();
    for (t, p) in probes(2, 3) {
        let t = t - 5.0;
        let h = eval_h(&ctx, t, &[p]).unwrap();
        assert!(h.displacement() <= ctx.displacement_bound() + 1e-5);
        let r = inverse_residual(&ctx, t, &[p]).unwrap();
        assert!(r <= 1e-5, "t = {t}: {r}");
    }
}

#[test]
fn strong_coupling_is_rejected() {
    let q = palmer_demo();
    let cert = palmer_cert(&q);
    let strong = q.with_gamma(0.6).unwrap();
    for mode in [LinearizationMode::FullLine, LinearizationMode::HalfLinePlus] {
        match make_context(&strong, &cert, 1e-6, mode) {
            Err(Error::GapViolation { q }) => assert!(q >= 1.0),
            other => panic!("expected a gap violation, got {other:?}"),
        }
    }
}

#[test]
fn negative_times_are_outside_the_half_line() {
    let q = palmer_demo();
    let ctx = make_context(&q, &palmer_cert(&q), 1e-6, LinearizationMode::HalfLinePlus).unwrap();
    assert!(eval_h(&ctx, -1.0, &[0.0]).is_err());
    assert!(eval_g(&ctx, 1.0, &[0.0, 1.0]).is_err());
}
