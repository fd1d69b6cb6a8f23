//! Floquet theory for periodic systems.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat, Vector};
use crate::ode::{self, OdeOptions};
use crate::propagate::{self, matrix_rhs, DenseFlow};
use crate::quadrature;
use crate::system::{LinearSystem, PERIOD_TOL};

/// Monodromy data `B = X(omega, 0) = e^{omega D}`.
#[derive(Debug, Clone)]
pub struct FloquetData {
    pub omega: f64,
    pub monodromy: Mat,
    /// Eigenvalues of `B`, by decreasing modulus.
    pub multipliers: Vec<Complex64>,
    pub d: CMat,
    /// `D` has imaginary parts below `1e-10`.
    pub d_is_real: bool,
    /// A multiplier sat on the negative real axis, so `D` is genuinely complex.
    pub on_branch_cut: bool,
    /// `min | |rho| - 1 |` over the multipliers.
    pub unit_circle_margin: f64,
}

/// JSON shape of [`FloquetData`].
#[derive(Debug, Clone, Serialize)]
pub struct FloquetReport {
    pub omega: f64,
    pub multipliers: Vec<[f64; 2]>,
    pub margin: f64,
    #[serde(rename = "D")]
    pub d: Vec<Vec<[f64; 2]>>,
    pub d_is_real: bool,
    pub monodromy: Vec<Vec<f64>>,
}

impl FloquetData {
    pub fn report(&self) -> FloquetReport {
        FloquetReport {
            omega: self.omega,
            multipliers: self.multipliers.iter().map(|z| [z.re, z.im]).collect(),
            margin: self.unit_circle_margin,
            d: (0..self.d.nrows())
                .map(|i| (0..self.d.ncols()).map(|j| [self.d[(i, j)].re, self.d[(i, j)].im]).collect())
                .collect(),
            d_is_real: self.d_is_real,
            monodromy: linalg::rows(&self.monodromy),
        }
    }

    /// Real part of `D`; meaningful when `d_is_real`.
    pub fn d_real(&self) -> Mat {
        self.d.map(|z| z.re)
    }
}

fn period_of(sys: &LinearSystem) -> Result<f64> {
    let omega = sys.period().ok_or_else(|| Error::NotPeriodic(sys.name().to_string()))?;
    let defect = sys.periodicity_defect(100).unwrap_or(0.0);
    let scale = 1.0 + sys.sampled_sup_norm(0.0, omega, 100);
    if defect > PERIOD_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "A(t + {omega}) differs from A(t) by {defect:e}; the declared period is wrong"
        )));
    }
    Ok(omega)
}

pub fn monodromy(sys: &LinearSystem, tol: f64) -> Result<FloquetData> {
    let omega = period_of(sys)?;
    let b = propagate::transition_matrix(sys, omega, 0.0, tol)?.x;
    from_monodromy(omega, b)
}

/// Floquet data from a known monodromy matrix.
pub fn from_monodromy(omega: f64, b: Mat) -> Result<FloquetData> {
    let mut multipliers: Vec<Complex64> = b.complex_eigenvalues().iter().copied().collect();
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let log = linalg::principal_log(&b)?;
    let d = log.value.map(|z| z / omega);
    let unit_circle_margin = multipliers.iter().map(|z| (z.norm() - 1.0).abs()).fold(f64::INFINITY, f64::min);
    let big = d.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let d_is_real = d.iter().all(|z| z.im.abs() <= 1e-10 * big);
    Ok(FloquetData { omega, monodromy: b, multipliers, d, d_is_real, on_branch_cut: log.on_branch_cut, unit_circle_margin })
}

/// `Q(t) = X(t,0) e^{-D t}` at each requested time.
pub fn floquet_factor(sys: &LinearSystem, data: &FloquetData, times: &[f64], tol: f64) -> Result<Vec<CMat>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let lo = times.iter().copied().fold(0.0, f64::min);
    let hi = times.iter().copied().fold(0.0, f64::max);
    let flow = DenseFlow::new(sys, lo, hi, 0.0, tol)?;
    Ok(times
        .iter()
        .map(|&t| linalg::to_complex(&flow.at(t)) * linalg::expm_complex(&(&data.d * Complex64::new(-t, 0.0))))
        .collect())
}

/// Hyperbolic when no multiplier lies within `tol` of the unit circle.
pub fn periodic_hyperbolic(data: &FloquetData, tol: f64) -> (bool, f64) {
    (data.unit_circle_margin > tol, data.unit_circle_margin)
}

/// The periodic response to a periodic forcing.
#[derive(Debug, Clone)]
pub struct PeriodicSolution {
    pub x0: Vector,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `|x(omega) - x(0)|` of the integrated trajectory.
    pub closure_defect: f64,
}

/// Unique `omega`-periodic solution of `x' = A(t) x + g(t)`,
/// `x(0) = [I - B]^{-1} int_0^omega X(omega, s) g(s) ds`.
pub fn periodic_solution(
    sys: &LinearSystem,
    g: &dyn Fn(f64) -> Vector,
    samples: usize,
    tol: f64,
) -> Result<PeriodicSolution> {
    let omega = period_of(sys)?;
    let n = sys.dim();
    for k in 0..64 {
        let t = omega * k as f64 / 64.0;
        let (a, b) = (g(t), g(t + omega));
        if a.len() != n {
            return Err(Error::Shape(format!("forcing has {} components, system dimension is {n}", a.len())));
        }
        if (&a - &b).norm() > 1e-10 * (1.0 + a.norm()) {
            return Err(Error::InvalidInput(format!("forcing is not {omega}-periodic")));
        }
    }
    let flow = DenseFlow::new(sys, 0.0, omega, 0.0, tol * 1e-2)?;
    let b = flow.at(omega);
    let i_minus_b = Mat::identity(n, n) - &b;
    let sigma_min = i_minus_b.singular_values().min();
    if sigma_min <= 1e-6 * linalg::norm2(&b).max(1.0) {
        return Err(Error::ResonantForcing { sigma_min });
    }
    let integral = quadrature::simpson_vec(
        |s, out| {
            let xs = flow.at(s);
            let v = xs.lu().solve(&g(s)).unwrap_or_else(|| Vector::from_element(n, f64::NAN));
            out.copy_from_slice((&b * v).as_slice());
        },
        0.0,
        omega,
        n,
        tol * 1e-2,
    );
    let rhs = Vector::from_vec(integral);
    let x0 = i_minus_b.lu().solve(&rhs).ok_or(Error::ResonantForcing { sigma_min })?;
    let mut field = matrix_rhs(sys);
    let forced = |t: f64, y: &[f64], dy: &mut [f64]| {
        field(t, y, dy);
        let gt = g(t);
        dy.iter_mut().zip(gt.iter()).for_each(|(d, v)| *d += v);
    };
    let tr = ode::solve(forced, 0.0, x0.as_slice(), omega, &OdeOptions::with_tol(tol * 1e-2))?;
    let samples = samples.max(1);
    let times: Vec<f64> = (0..=samples).map(|k| omega * k as f64 / samples as f64).collect();
    let states: Vec<Vec<f64>> = times.iter().map(|&t| tr.at(t)).collect();
    let closure_defect = Vector::from_column_slice(tr.final_state()).metric_distance(&x0);
    Ok(PeriodicSolution { x0, times, states, closure_defect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::periodic_scalar;
    use std::f64::consts::PI;

    #[test]
    fn periodic_scalar_examples() {
        let data = monodromy(&periodic_scalar(0.3), 1e-12).unwrap();
        let want = (0.6 * PI).exp();
        assert!((data.monodromy[(0, 0)] - want).abs() / want < 1e-9);
        assert!((data.multipliers[0].re - want).abs() / want < 1e-9);
        assert!((data.d[(0, 0)].re - 0.3).abs() < 1e-9 && data.d_is_real);
        assert!(periodic_hyperbolic(&data, 1e-6).0);

        let data = monodromy(&periodic_scalar(0.0), 1e-12).unwrap();
        assert!((data.multipliers[0].re - 1.0).abs() < 1e-9);
        assert!(data.unit_circle_margin < 1e-9);
        assert!(!periodic_hyperbolic(&data, 1e-6).0);
    }

    #[test]
    fn rotation_generator_monodromy() {
        let sys = LinearSystem::constant("j", Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).with_period(2.0 * PI);
        let data = monodromy(&sys, 1e-12).unwrap();
        assert!((&data.monodromy - Mat::identity(2, 2)).abs().max() < 1e-9);
        assert!(data.multipliers.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-6));
        assert!(data.unit_circle_margin < 1e-9);
    }

    #[test]
    fn diagonal_margin() {
        let sys = LinearSystem::constant("d", Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).with_period(1.0);
        let data = monodromy(&sys, 1e-12).unwrap();
        let want = (std::f64::consts::E - 1.0).min(1.0 - (-1f64).exp());
        let (hyp, margin) = periodic_hyperbolic(&data, 1e-6);
        assert!(hyp && (margin - want).abs() < 1e-9);
    }

    #[test]
    fn factor_examples() {
        let sys = periodic_scalar(0.3);
        let data = monodromy(&sys, 1e-12).unwrap();
        let q = floquet_factor(&sys, &data, &[0.0, PI, 1.0], 1e-12).unwrap();
        assert!((q[0][(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((q[1][(0, 0)].re - 1.0).abs() < 1e-8);
        assert!((q[2][(0, 0)].re - 1f64.sin().exp()).abs() < 1e-8);

        let auto = LinearSystem::constant("a", Mat::from_row_slice(2, 2, &[0.1, 1.0, -2.0, -0.5])).with_period(1.0);
        let data = monodromy(&auto, 1e-12).unwrap();
        for q in floquet_factor(&auto, &data, &[0.3, 1.7], 1e-12).unwrap() {
            assert!((q - CMat::identity(2, 2)).iter().all(|z| z.norm() < 1e-7));
        }
    }

    #[test]
    fn forced_response() {
        let sys = LinearSystem::constant("decay", Mat::from_element(1, 1, -1.0)).with_period(2.0 * PI);
        let g = |t: f64| Vector::from_element(1, t.cos());
        let sol = periodic_solution(&sys, &g, 16, 1e-10).unwrap();
        assert!((sol.x0[0] - 0.5).abs() < 1e-9);
        assert!(sol.closure_defect < 1e-9);
        for (t, x) in sol.times.iter().zip(&sol.states) {
            assert!((x[0] - 0.5 * (t.cos() + t.sin())).abs() < 1e-8);
        }
        let zero = |_: f64| Vector::zeros(1);
        assert!(periodic_solution(&sys, &zero, 4, 1e-10).unwrap().x0[0].abs() < 1e-14);
    }

    #[test]
    fn resonance_and_missing_period() {
        let g = |t: f64| Vector::from_element(1, t.cos());
        assert!(matches!(periodic_solution(&periodic_scalar(0.0), &g, 4, 1e-10), Err(Error::ResonantForcing { .. })));
        let aperiodic = LinearSystem::scalar("x", |t| t);
        assert!(matches!(monodromy(&aperiodic, 1e-10), Err(Error::NotPeriodic(_))));
    }
}
