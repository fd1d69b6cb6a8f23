//! Property checks shared by the property suite and the acceptance runner.
//! Each check returns a description of the first violation it finds.

use dlab::dichotomy::{full_line_criterion, noncriticality_horizon, noncriticality_test, CertifyOptions, SplitOptions};
use dlab::linalg::{operator_norm_2, Mat};
use dlab::propagate::{adjoint_check, bounded_growth_fit, transition_matrix, uniform_grid, GrowthMode, SampledFlow};
use dlab::spectrum::{rank_step_function, SpectrumOptions};
use dlab::system::{builtin, catalog, Domain, LinearSystem};
use proptest::prelude::*;

pub const TOL: f64 = 1e-10;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}
#[allow(unused_imports)]
pub(crate) use ensure;

/// `A(t) = A0 + sin(w t) A1`.
fn oscillating(n: usize, a0: Vec<f64>, a1: Vec<f64>, w: f64) -> LinearSystem {
    let a0 = Mat::from_row_slice(n, n, &a0);
    let a1 = Mat::from_row_slice(n, n, &a1);
    LinearSystem::new("osc", n, Domain::FullLine, move |t| &a0 + (w * t).sin() * &a1)
}

/// Oscillating 2x2 and 3x3 coefficients with entries in [-1, 1].
pub fn coefficients() -> impl Strategy<Value = LinearSystem> {
    (2usize..=3).prop_flat_map(|n| {
        (
            proptest::collection::vec(-1.0f64..1.0, n * n),
            proptest::collection::vec(-1.0f64..1.0, n * n),
            0.2f64..3.0,
        )
            .prop_map(move |(a0, a1, w)| oscillating(n, a0, a1, w))
    })
}

/// Constant upper triangular coefficients with 1 to 3 diagonal entries.
pub fn triangular() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (proptest::collection::vec(-2.0f64..2.0, 1..4), -1.0f64..1.0)
}

fn norm(m: &Mat) -> f64 {
    operator_norm_2(m).unwrap()
}

/// `X(t,r) X(r,s) = X(t,s)`, `X(t,s) X(s,t) = I` and `X(s,s) = I`, to
/// `10 tol` relative to the sizes of the factors.
pub fn cocycle(sys: &LinearSystem, t: f64, r: f64, s: f64) -> Result<(), String> {
    let x = |a: f64, b: f64| transition_matrix(sys, a, b, TOL).map(|x| x.x).map_err(|e| e.to_string());
    let (x_ts, x_tr, x_rs, x_st) = (x(t, s)?, x(t, r)?, x(r, s)?, x(s, t)?);
    let id = Mat::identity(sys.dim(), sys.dim());
    let defect = norm(&(&x_tr * &x_rs - &x_ts));
    let scale = (norm(&x_tr) * norm(&x_rs)).max(1.0);
    ensure!(defect <= 10.0 * TOL * scale, "cocycle defect {defect:e} at (t, r, s) = ({t}, {r}, {s})");
    let defect = norm(&(&x_ts * &x_st - &id));
    let scale = (norm(&x_ts) * norm(&x_st)).max(1.0);
    ensure!(defect <= 10.0 * TOL * scale, "inverse defect {defect:e} at (t, s) = ({t}, {s})");
    ensure!(x(s, s)? == id, "X(s, s) differs from I at s = {s}");
    Ok(())
}

/// `Y(t)^T X(t)` stays at `I` to 1e-6 on `[a, a + len]`.
pub fn adjoint_constancy(sys: &LinearSystem, a: f64, len: f64) -> Result<(), String> {
    let grid = uniform_grid(a, a + len, len / 20.0, None);
    let defect = adjoint_check(sys, &grid, 1e-12).map_err(|e| e.to_string())?;
    ensure!(defect <= 1e-6, "adjoint defect {defect:e} on [{a}, {}]", a + len);
    Ok(())
}

/// `e^{-M|t-s|} <= |X(t,s)| <= e^{M|t-s|}` with `M = sup |A|`, and the
/// fitted bound `K e^{alpha |t-s|}` dominates every sampled pair.
pub fn growth_sandwich(sys: &LinearSystem, a: f64) -> Result<(), String> {
    let b = a + 3.0;
    let grid = uniform_grid(a, b, 0.25, None);
    let m = sys.sampled_sup_norm(a, b, 2001) * (1.0 + 1e-3);
    let flow = SampledFlow::new(sys, &grid, grid[0], TOL).map_err(|e| e.to_string())?;
    let fit = bounded_growth_fit(sys, &grid, GrowthMode::Both, TOL).map_err(|e| e.to_string())?;
    ensure!(fit.k >= 1.0 && fit.alpha >= 0.0, "fit K = {}, alpha = {}", fit.k, fit.alpha);
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let d = (grid[i] - grid[j]).abs();
            let x = norm(&flow.transition(i, j).map_err(|e| e.to_string())?);
            let (t, s) = (grid[i], grid[j]);
            ensure!(x <= (m * d).exp() * (1.0 + 1e-8), "|X({t}, {s})| = {x} above e^(M|t-s|), M = {m}");
            ensure!(x >= (-m * d).exp() * (1.0 - 1e-8), "|X({t}, {s})| = {x} below e^(-M|t-s|), M = {m}");
            ensure!(x <= fit.k * (fit.alpha * d).exp() * (1.0 + 1e-8), "|X({t}, {s})| = {x} above the fitted bound");
        }
    }
    Ok(())
}

/// Along an increasing grid of shifts the projector rank never drops on
/// resolvent points, and it counts the diagonal entries below the shift
/// wherever every entry is at least 0.3 away from it.
pub fn rank_monotonicity(diag: &[f64], off: f64) -> Result<(), String> {
    let n = diag.len();
    let a = Mat::from_fn(n, n, |i, j| if i == j { diag[i] } else if j > i { off } else { 0.0 });
    let sys = LinearSystem::constant("tri", a);
    let lambdas: Vec<f64> = (0..=12).map(|k| -3.0 + 0.5 * k as f64).collect();
    let profile = rank_step_function(&sys, &lambdas, 20.0, &SpectrumOptions::default()).map_err(|e| e.to_string())?;
    ensure!(profile.inconsistencies.is_empty(), "{:?}", profile.inconsistencies);
    let mut last = 0;
    for p in &profile.points {
        if let Some(r) = p.rank {
            ensure!(r >= last, "rank drops to {r} at lambda = {}", p.lambda);
            last = r;
        }
        if diag.iter().all(|d| (d - p.lambda).abs() >= 0.3) {
            let want = diag.iter().filter(|&&d| d < p.lambda).count();
            ensure!(p.rank == Some(want), "rank {:?} at lambda = {}, expected {want} for {diag:?}", p.rank, p.lambda);
        }
    }
    Ok(())
}

/// Every catalog system with a verified dichotomy certificate on `[0, 10]`
/// is noncritical there with `theta = 0.9` at the horizon its constants
/// prescribe. Returns the names of the systems checked.
pub fn certified_catalog_is_noncritical() -> Result<Vec<String>, String> {
    let theta = 0.9;
    let horizon = 10.0;
    let mut checked = Vec::new();
    for entry in catalog() {
        let name = if entry.name == "periodic_scalar(c)" { "periodic_scalar(0.3)".to_string() } else { entry.name.to_string() };
        let sys = builtin(&name).map_err(|e| e.to_string())?.linear().clone();
        // systems without a conclusive splitting carry no certificate
        let Ok(report) = full_line_criterion(&sys, horizon, &SplitOptions::default(), &CertifyOptions::default()) else {
            continue;
        };
        let cert = &report.plus;
        if !cert.is_verified() {
            continue;
        }
        let t_star = noncriticality_horizon(cert.k, cert.alpha, theta);
        if 2.0 * t_star >= horizon {
            continue;
        }
        let grid = uniform_grid(t_star, horizon - t_star, 0.5, None);
        let r = noncriticality_test(&sys, t_star, theta, &grid, 8, 11, TOL).map_err(|e| e.to_string())?;
        ensure!(r.holds, "{name}: margin {} at t = {} with T = {t_star}", r.margin, r.worst_time);
        checked.push(name);
    }
    for required in ["markus_yamabe", "auto_diag_113", "scalar_decay", "palmer_tanh"] {
        ensure!(checked.iter().any(|c| c == required), "{required} was not certified: {checked:?}");
    }
    Ok(checked)
}
