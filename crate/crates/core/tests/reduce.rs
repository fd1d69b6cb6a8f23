use dlab::dichotomy::CertifyOptions;
use dlab::linalg::{Mat, ProjectionMatrix, Vector};
use dlab::propagate::uniform_grid;
use dlab::reduce::*;
use dlab::spectrum::halfline_spectrum;
use dlab::system::{builtin, markus_yamabe, LinearSystem};
use dlab::Error;

fn markus_p() -> ProjectionMatrix {
    ProjectionMatrix::new(Mat::from_diagonal(&Vector::from_vec(vec![0.0, 1.0])), 1e-12).unwrap()
}

#[test]
fn markus_coppel_matches_column_norms() {
    let grid = uniform_grid(-3.0, 3.0, 0.01, None);
    let res = coppel_similarity(&markus_yamabe(), &markus_p(), &grid, &ReduceOptions::default()).unwrap();
    assert_eq!(res.block_sizes, vec![1, 1]);
    // oracle: the columns e^{-t}(sin t, cos t) and e^{t/2}(-cos t, sin t) are
    // orthogonal, so R = diag(e^{-t}, e^{t/2}) exactly
    for (t, r) in res.grid.iter().zip(&res.r_samples) {
        assert!((r[(0, 0)] / (-t).exp() - 1.0).abs() < 1e-8, "t = {t}");
        assert!((r[(1, 1)] / (0.5 * t).exp() - 1.0).abs() < 1e-8, "t = {t}");
    }
    let n = res.b_samples.len() as f64;
    let mean = |i: usize| res.b_samples.iter().map(|b| b[(i, i)]).sum::<f64>() / n;
    assert!((mean(0) + 1.0).abs() < 0.01 && (mean(1) - 0.5).abs() < 0.01);
    assert!(res.s_norm_bound <= 2f64.sqrt() + 1e-6);
    assert!(res.s_inv_bound_ratio.unwrap() <= 1.0 + 1e-8);
    assert!(res.commutation_defect <= 1e-9 && res.block_defect <= 1e-8);
    assert!(res.projection_defect.unwrap() < 1e-8);
    assert!(res.similarity_residual <= 0.05, "{}", res.similarity_residual);
}

#[test]
fn residual_is_first_order() {
    let opts = ReduceOptions::default();
    let coarse = coppel_similarity(&markus_yamabe(), &markus_p(), &uniform_grid(-3.0, 3.0, 0.01, None), &opts).unwrap();
    let fine = coppel_similarity(&markus_yamabe(), &markus_p(), &uniform_grid(-3.0, 3.0, 0.005, None), &opts).unwrap();
    let ratio = coarse.similarity_residual / fine.similarity_residual;
    assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio}");
}

#[test]
fn markus_subsystems_certify() {
    let grid = uniform_grid(-3.0, 3.0, 0.01, None);
    let res = coppel_similarity(&markus_yamabe(), &markus_p(), &grid, &ReduceOptions::default()).unwrap();
    let certs = subsystem_dichotomies(&res, &CertifyOptions::default()).unwrap();
    assert_eq!(certs.len(), 2);
    assert!(certs.iter().all(|c| c.is_verified()));
    assert_eq!(certs[0].projector.rank, 1);
    assert_eq!(certs[1].projector.rank, 0);
    assert!((certs[0].alpha - 1.0).abs() < 0.05, "{}", certs[0].alpha);
    assert!((certs[1].alpha - 0.5).abs() < 0.05, "{}", certs[1].alpha);
}

#[test]
fn identity_projector_gives_one_block() {
    let sys = LinearSystem::constant("decay", Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0])));
    let grid = uniform_grid(-2.0, 2.0, 0.05, None);
    let p = ProjectionMatrix::new(Mat::identity(2, 2), 1e-12).unwrap();
    let res = coppel_similarity(&sys, &p, &grid, &ReduceOptions::default()).unwrap();
    assert_eq!(res.block_sizes, vec![2]);
    let certs = subsystem_dichotomies(&res, &CertifyOptions::default()).unwrap();
    assert_eq!(certs.len(), 1);
    assert!(certs[0].is_verified() && certs[0].projector.rank == 2);
}

#[test]
fn coppel_counterexample_is_refused() {
    let sys = builtin("coppel_counterexample").unwrap().linear().clone();
    let p = ProjectionMatrix::new(Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.0])), 1e-12).unwrap();
    let r = coppel_similarity(&sys, &p, &uniform_grid(0.0, 4.0, 0.05, None), &ReduceOptions::default());
    assert!(matches!(r, Err(Error::NotReducibleHere(_))));
}

#[test]
fn spectral_blocks_carry_their_intervals() {
    let opts = ReduceOptions::default();
    let grid = uniform_grid(0.0, 40.0, 0.05, None);
    for (name, sizes, spectra) in [
        ("auto_diag_113", vec![1, 2], vec![-1.0, 1.0]),
        ("markus_yamabe", vec![1, 1], vec![-1.0, 0.5]),
    ] {
        let sys = builtin(name).unwrap().linear().clone();
        let spec = halfline_spectrum(&sys, 40.0, 8.0, &opts.spectrum).unwrap();
        let res = spectral_block_diagonalize(&sys, &spec, &grid, &opts).unwrap();
        assert_eq!(res.block_sizes, sizes, "{name}");
        assert!(res.block_defect < 1e-6, "{name}: {}", res.block_defect);
        assert!(res.s_norm_bound <= 2f64.sqrt() + 1e-6, "{name}: {}", res.s_norm_bound);
        assert!(res.similarity_residual < 0.2, "{name}: {}", res.similarity_residual);
        for (block, want) in res.block_spectra(8.0, &opts.spectrum).unwrap().iter().zip(&spectra) {
            assert_eq!(block.intervals.len(), 1, "{name}");
            let [a, b] = block.intervals[0].bounds;
            assert!((a - want).abs() <= 0.1 && (b - want).abs() <= 0.1, "{name}: [{a}, {b}] vs {want}");
        }
    }
}
