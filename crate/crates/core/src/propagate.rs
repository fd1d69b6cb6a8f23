//! Transition matrices and the classical identities they satisfy.
//!
//! Three representations of the flow are provided:
//!
//! * [`transition_matrix`] integrates `X(t,s)` for one pair of times;
//! * [`DenseFlow`] keeps the continuous extension of `X(., anchor)` over an
//!   interval, for quadratures that need `X` at arbitrary times;
//! * [`SampledFlow`] stores the short-step transitions `X(t_{k+1}, t_k)`
//!   of a grid. Long-horizon quantities are composed from those steps, which
//!   never forms a badly conditioned fundamental matrix unless asked to.

use std::sync::Arc;

use nalgebra::{DMatrixView, DMatrixViewMut};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::ode::{self, OdeOptions, Trajectory};
use crate::quadrature;
use crate::system::{Conjugation, LinearSystem};

/// `X(t, s)` together with how it was obtained.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionSample {
    pub t: f64,
    pub s: f64,
    #[serde(with = "crate::linalg::mat_rows")]
    pub x: Mat,
    pub tol: f64,
    pub err_est: f64,
}

/// Right-hand side `Y' = A(t) Y` on column-major flattened matrices.
pub(crate) fn matrix_rhs(sys: &LinearSystem) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
    let n = sys.dim();
    move |t, y, dy| {
        let a = sys.coeff_unchecked(t);
        let ncols = y.len() / n;
        let yv = DMatrixView::from_slice(y, n, ncols);
        let mut out = DMatrixViewMut::from_slice(dy, n, ncols);
        out.gemm(1.0, &a, &yv, 0.0);
    }
}

fn check_span(sys: &LinearSystem, a: f64, b: f64) -> Result<()> {
    sys.check_time(a)?;
    sys.check_time(b)
}

/// Solution of `x' = A(t) x`, `x(t0) = x0`, up to `t1` (either direction).
pub fn integrate_ivp(sys: &LinearSystem, t0: f64, x0: &[f64], t1: f64, tol: f64) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::Shape(format!("initial state has {} entries, system dimension is {}", x0.len(), sys.dim())));
    }
    check_span(sys, t0, t1)?;
    ode::solve(matrix_rhs(sys), t0, x0, t1, &OdeOptions::with_tol(tol))
}

/// Solution of a general first-order system `x' = f(t, x)`.
pub fn integrate_rhs<F>(f: F, t0: f64, x0: &[f64], t1: f64, tol: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    ode::solve(f, t0, x0, t1, &OdeOptions::with_tol(tol))
}

fn flatten(m: &Mat) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn unflatten(v: &[f64], n: usize) -> Mat {
    Mat::from_column_slice(n, v.len() / n, v)
}

fn raw_transition(sys: &LinearSystem, t: f64, s: f64, tol: f64) -> Result<(Mat, f64)> {
    let n = sys.dim();
    if let Some(c) = sys.conjugation() {
        let (xb, err) = raw_transition(&c.base, t, s, tol)?;
        return Ok(((c.q_inv)(t) * xb * (c.q)(s), err));
    }
    let tr = ode::solve(matrix_rhs(sys), s, &flatten(&Mat::identity(n, n)), t, &OdeOptions::with_tol(tol).sparse())?;
    Ok((unflatten(tr.final_state(), n), tr.err_est))
}

/// `X(t, s)` by integrating the matrix equation from `s` to `t` with `X(s,s) = I`.
pub fn transition_matrix(sys: &LinearSystem, t: f64, s: f64, tol: f64) -> Result<TransitionSample> {
    check_span(sys, t, s)?;
    let (x, err_est) = raw_transition(sys, t, s, tol)?;
    Ok(TransitionSample { t, s, x, tol, err_est })
}

/// Continuous representation of `X(t, anchor)` for `t` in `[a, b]`.
#[derive(Clone)]
pub struct DenseFlow {
    n: usize,
    anchor: f64,
    forward: Option<Trajectory>,
    backward: Option<Trajectory>,
    conj: Option<Arc<Conjugation>>,
    pub a: f64,
    pub b: f64,
}

impl DenseFlow {
    pub fn new(sys: &LinearSystem, a: f64, b: f64, anchor: f64, tol: f64) -> Result<Self> {
        if !(a <= anchor && anchor <= b) {
            return Err(Error::InvalidInput(format!("anchor {anchor} must lie in [{a}, {b}]")));
        }
        check_span(sys, a, b)?;
        let (base, conj) = match sys.conjugation() {
            Some(c) => (&c.base, Some(Arc::new(c.clone()))),
            None => (sys, None),
        };
        let n = sys.dim();
        let id = flatten(&Mat::identity(n, n));
        let opts = OdeOptions::with_tol(tol);
        let forward = if b > anchor { Some(ode::solve(matrix_rhs(base), anchor, &id, b, &opts)?) } else { None };
        let backward = if a < anchor { Some(ode::solve(matrix_rhs(base), anchor, &id, a, &opts)?) } else { None };
        Ok(Self { n, anchor, forward, backward, conj, a, b })
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// `X(t, anchor)`.
    pub fn at(&self, t: f64) -> Mat {
        let t = t.clamp(self.a, self.b);
        let base = if t > self.anchor {
            unflatten(&self.forward.as_ref().expect("forward part").at(t), self.n)
        } else if t < self.anchor {
            unflatten(&self.backward.as_ref().expect("backward part").at(t), self.n)
        } else {
            Mat::identity(self.n, self.n)
        };
        match &self.conj {
            Some(c) => (c.q_inv)(t) * base * (c.q)(self.anchor),
            None => base,
        }
    }

    /// `X(t, s)` composed from the anchored flow.
    pub fn transition(&self, t: f64, s: f64) -> Result<Mat> {
        Ok(self.at(t) * linalg::inverse(&self.at(s))?)
    }
}

/// Step transitions `X(t_{k+1}, t_k)` over an increasing grid, with a
/// distinguished anchor node.
#[derive(Debug, Clone)]
pub struct SampledFlow {
    pub grid: Vec<f64>,
    pub steps: Vec<Mat>,
    pub anchor: usize,
}

/// Grid of `[a, b]` with spacing at most `h`, containing `extra` if it lies
/// inside.
pub fn uniform_grid(a: f64, b: f64, h: f64, extra: Option<f64>) -> Vec<f64> {
    let m = (((b - a) / h).round() as usize).max(1);
    let mut g: Vec<f64> = (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect();
    if let Some(x) = extra {
        if x > a && x < b && !g.iter().any(|v| (v - x).abs() <= 1e-12 * h) {
            g.push(x);
            g.sort_by(f64::total_cmp);
        }
    }
    g
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput("grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("grid must be strictly increasing".into()));
    }
    Ok(())
}

impl SampledFlow {
    /// Integrates every grid step with tolerance `tol`. The anchor is the
    /// node nearest to `anchor_time`.
    pub fn new(sys: &LinearSystem, grid: &[f64], anchor_time: f64, tol: f64) -> Result<Self> {
        validate_grid(grid)?;
        check_span(sys, grid[0], grid[grid.len() - 1])?;
        let steps = grid
            .windows(2)
            .map(|w| raw_transition(sys, w[1], w[0], tol).map(|(x, _)| x))
            .collect::<Result<Vec<_>>>()?;
        let anchor = nearest(grid, anchor_time);
        Ok(Self { grid: grid.to_vec(), steps, anchor })
    }

    /// Builds a flow from precomputed step transitions.
    pub fn from_steps(grid: Vec<f64>, steps: Vec<Mat>, anchor: usize) -> Result<Self> {
        validate_grid(&grid)?;
        if steps.len() + 1 != grid.len() || anchor >= grid.len() {
            return Err(Error::Shape("steps must number one less than grid nodes".into()));
        }
        Ok(Self { grid, steps, anchor })
    }

    pub fn dim(&self) -> usize {
        self.steps[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn anchor_time(&self) -> f64 {
        self.grid[self.anchor]
    }

    /// Flow of `A(t) - lambda I`, which rescales every step by `e^{-lambda h}`.
    pub fn shifted(&self, lambda: f64) -> SampledFlow {
        let steps = self
            .steps
            .iter()
            .zip(self.grid.windows(2))
            .map(|(m, w)| m * (-lambda * (w[1] - w[0])).exp())
            .collect();
        SampledFlow { grid: self.grid.clone(), steps, anchor: self.anchor }
    }

    /// Nodes `i0..=i1` with the anchor moved to `i0` if it falls outside.
    pub fn restrict(&self, i0: usize, i1: usize) -> SampledFlow {
        let anchor = if (i0..=i1).contains(&self.anchor) { self.anchor - i0 } else { 0 };
        SampledFlow { grid: self.grid[i0..=i1].to_vec(), steps: self.steps[i0..i1].to_vec(), anchor }
    }

    /// `X(t_i, t_j)` by composing steps; inverses are taken step by step.
    pub fn transition(&self, i: usize, j: usize) -> Result<Mat> {
        let n = self.dim();
        let mut x = Mat::identity(n, n);
        if i >= j {
            for k in j..i {
                x = &self.steps[k] * x;
            }
        } else {
            for k in (i..j).rev() {
                x = linalg::inverse(&self.steps[k])? * x;
            }
        }
        Ok(x)
    }

    /// `X(t_k, t_anchor)` at every node.
    pub fn fundamentals(&self) -> Result<Vec<Mat>> {
        let n = self.dim();
        let mut out = vec![Mat::identity(n, n); self.len()];
        for k in self.anchor..self.steps.len() {
            out[k + 1] = &self.steps[k] * &out[k];
        }
        for k in (0..self.anchor).rev() {
            out[k] = linalg::inverse(&self.steps[k])? * &out[k + 1];
        }
        Ok(out)
    }
}

pub(crate) fn nearest(grid: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, g) in grid.iter().enumerate() {
        if (g - t).abs() < (grid[best] - t).abs() {
            best = k;
        }
    }
    best
}

/// Orthonormal bases `B_k` of `X(t_k, t_anchor) span(B_anchor)` and the
/// coefficients `C_k = B_{k+1}^T X(t_{k+1}, t_k) B_k`, so that
/// `X(t_i, t_j) B_j = B_i C_{i-1} ... C_j` for `i >= j`.
#[derive(Debug, Clone)]
pub struct SubspaceTrack {
    pub bases: Vec<Mat>,
    pub coeffs: Vec<Mat>,
}

fn orthonormalize(m: &Mat) -> Mat {
    if m.ncols() == 0 {
        return m.clone();
    }
    let q = m.clone().qr().q();
    q.columns(0, m.ncols()).into_owned()
}

pub fn track_subspace(flow: &SampledFlow, basis: &Mat) -> Result<SubspaceTrack> {
    let n = flow.dim();
    let r = basis.ncols();
    let mut bases = vec![Mat::zeros(n, r); flow.len()];
    bases[flow.anchor] = orthonormalize(basis);
    for k in flow.anchor..flow.steps.len() {
        bases[k + 1] = orthonormalize(&(&flow.steps[k] * &bases[k]));
    }
    for k in (0..flow.anchor).rev() {
        bases[k] = orthonormalize(&(linalg::inverse(&flow.steps[k])? * &bases[k + 1]));
    }
    let coeffs = (0..flow.steps.len())
        .map(|k| bases[k + 1].transpose() * &flow.steps[k] * &bases[k])
        .collect();
    Ok(SubspaceTrack { bases, coeffs })
}

/// `det X(t1, t0)` against `exp(int Tr A)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LiouvilleCheck {
    pub det_numeric: f64,
    pub det_formula: f64,
    pub rel_err: f64,
}

pub fn liouville_check(sys: &LinearSystem, t0: f64, t1: f64, tol: f64) -> Result<LiouvilleCheck> {
    let x = transition_matrix(sys, t1, t0, tol)?.x;
    let det_numeric = x.determinant();
    let integral = quadrature::simpson(|s| sys.coeff_unchecked(s).trace(), t0, t1, tol);
    let det_formula = integral.exp();
    let rel_err = (det_numeric - det_formula).abs() / det_formula.abs();
    Ok(LiouvilleCheck { det_numeric, det_formula, rel_err })
}

/// Integrates `x' = A x` and `y' = -A^T y` from `grid[0]` with identity
/// data and returns the largest `|Y^T(t) X(t) - I|_2` over the grid.
pub fn adjoint_check(sys: &LinearSystem, grid: &[f64], tol: f64) -> Result<f64> {
    validate_grid(grid)?;
    check_span(sys, grid[0], grid[grid.len() - 1])?;
    let n = sys.dim();
    let mut y0 = flatten(&Mat::identity(n, n));
    y0.extend(flatten(&Mat::identity(n, n)));
    let nn = n * n;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let a = sys.coeff_unchecked(t);
        let xv = DMatrixView::from_slice(&y[..nn], n, n);
        let yv = DMatrixView::from_slice(&y[nn..], n, n);
        let (dx, dyy) = dy.split_at_mut(nn);
        DMatrixViewMut::from_slice(dx, n, n).gemm(1.0, &a, &xv, 0.0);
        DMatrixViewMut::from_slice(dyy, n, n).gemm_tr(-1.0, &a, &yv, 0.0);
    };
    let tr = ode::solve(rhs, grid[0], &y0, grid[grid.len() - 1], &OdeOptions::with_tol(tol))?;
    let mut worst = 0.0f64;
    for &t in grid {
        let s = tr.at(t);
        let x = unflatten(&s[..nn], n);
        let y = unflatten(&s[nn..], n);
        worst = worst.max(linalg::norm2(&(y.transpose() * x - Mat::identity(n, n))));
    }
    Ok(worst)
}

/// Solves `Q' = A(t) Q - Q B(t) + F(t)` from `Q(s) = q_s` to time `t`.
pub fn sylvester_flow(
    a_sys: &LinearSystem,
    b_sys: &LinearSystem,
    f: &dyn Fn(f64) -> Mat,
    q_s: &Mat,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<Mat> {
    let (n, m) = (a_sys.dim(), b_sys.dim());
    if q_s.nrows() != n || q_s.ncols() != m {
        return Err(Error::Shape(format!("Q must be {n}x{m}, got {}x{}", q_s.nrows(), q_s.ncols())));
    }
    check_span(a_sys, s, t)?;
    check_span(b_sys, s, t)?;
    let rhs = |tau: f64, y: &[f64], dy: &mut [f64]| {
        let q = DMatrixView::from_slice(y, n, m);
        let d = a_sys.coeff_unchecked(tau) * q - q * b_sys.coeff_unchecked(tau) + f(tau);
        dy.copy_from_slice(d.as_slice());
    };
    let tr = ode::solve(rhs, s, &flatten(q_s), t, &OdeOptions::with_tol(tol).sparse())?;
    Ok(unflatten(tr.final_state(), n))
}

/// Representation formula
/// `Q(t) = X(t,s) Q(s) Y(s,t) + int_s^t X(t,r) F(r) Y(r,t) dr`
/// with `X`, `Y` the transition matrices of `A` and `B`.
pub fn sylvester_representation(
    a_sys: &LinearSystem,
    b_sys: &LinearSystem,
    f: &dyn Fn(f64) -> Mat,
    q_s: &Mat,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<Mat> {
    let (n, m) = (a_sys.dim(), b_sys.dim());
    let (lo, hi) = (s.min(t), s.max(t));
    let xa = DenseFlow::new(a_sys, lo, hi, s, tol)?;
    let yb = DenseFlow::new(b_sys, lo, hi, s, tol)?;
    let x_t = xa.at(t);
    let y_t_inv = linalg::inverse(&yb.at(t))?;
    let homogeneous = &x_t * q_s * &y_t_inv;
    let integral = quadrature::simpson_vec(
        |r, out| {
            let x_r_inv = linalg::inverse(&xa.at(r)).unwrap_or_else(|_| Mat::from_element(n, n, f64::NAN));
            let val = &x_t * x_r_inv * f(r) * yb.at(r) * &y_t_inv;
            out.copy_from_slice(val.as_slice());
        },
        s,
        t,
        n * m,
        tol,
    );
    Ok(homogeneous + unflatten(&integral, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthMode {
    Growth,
    Decay,
    Both,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    pub mode: GrowthMode,
    pub k: f64,
    pub alpha: f64,
    /// The `(t, s)` pair at which the fitted bound is attained.
    pub worst_pair: (f64, f64),
    /// Coefficients grow across the grid, so no uniform bound is expected.
    pub unbounded: bool,
}

/// Quarter-interval maxima of `|A(t)|_2` over `[a, b]`: the coefficients
/// are flagged as growing when the maxima increase and the last exceeds
/// twice `max(first, 1)`. Returns `(first, last)` when flagged.
pub fn coefficient_growth(sys: &LinearSystem, a: f64, b: f64) -> Option<(f64, f64)> {
    let q = (b - a) / 4.0;
    let maxima: Vec<f64> = (0..4).map(|i| sys.sampled_sup_norm(a + q * i as f64, a + q * (i + 1) as f64, 64)).collect();
    let increasing = maxima.windows(2).all(|w| w[1] > w[0]);
    (increasing && maxima[3] > 2.0 * maxima[0].max(1.0)).then(|| (maxima[0], maxima[3]))
}

/// Fits `|X(t,s)| <= K e^{alpha |t-s|}` on all ordered grid pairs.
///
/// `Growth` uses pairs with `t >= s`, `Decay` pairs with `t <= s`, `Both`
/// all of them. `alpha` is the slope of the upper envelope of
/// `ln |X(t,s)|` against `|t - s|` over the right half of the separation
/// range (never negative), and `K >= 1` is the smallest constant making the
/// bound hold on the grid with that `alpha`.
pub fn bounded_growth_fit(sys: &LinearSystem, grid: &[f64], mode: GrowthMode, tol: f64) -> Result<GrowthFit> {
    let flow = SampledFlow::new(sys, grid, grid[0], tol)?;
    let mut fit = growth_fit_flow(&flow, mode)?;
    fit.unbounded = coefficient_growth(sys, grid[0], grid[grid.len() - 1]).is_some();
    Ok(fit)
}

pub(crate) fn growth_fit_flow(flow: &SampledFlow, mode: GrowthMode) -> Result<GrowthFit> {
    let n = flow.dim();
    let len = flow.len();
    // (separation, ln norm, t, s)
    let mut pts: Vec<(f64, f64, f64, f64)> = Vec::new();
    let want_growth = mode != GrowthMode::Decay;
    let want_decay = mode != GrowthMode::Growth;
    let inverses: Vec<Mat> = if want_decay {
        flow.steps.iter().map(linalg::inverse).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    for j in 0..len {
        let mut fwd = Mat::identity(n, n);
        let mut bwd = Mat::identity(n, n);
        for i in j..len {
            if i > j {
                if want_growth {
                    fwd = &flow.steps[i - 1] * fwd;
                }
                if want_decay {
                    bwd *= &inverses[i - 1];
                }
            }
            let d = flow.grid[i] - flow.grid[j];
            if want_growth {
                let v = linalg::norm2(&fwd);
                if !v.is_finite() {
                    return Err(Error::Blowup { t: flow.grid[i] });
                }
                pts.push((d, v.ln(), flow.grid[i], flow.grid[j]));
            }
            if want_decay {
                // bwd = X(t_j, t_i): the pair (t, s) = (t_j, t_i) with t <= s
                let v = linalg::norm2(&bwd);
                if !v.is_finite() {
                    return Err(Error::Blowup { t: flow.grid[i] });
                }
                pts.push((d, v.ln(), flow.grid[j], flow.grid[i]));
            }
        }
    }
    let d_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    // envelope value at the largest separation and the tightest slope to it
    let top = pts.iter().filter(|p| p.0 >= d_max * (1.0 - 1e-9)).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut sigma = f64::INFINITY;
    for p in pts.iter().filter(|p| p.0 >= 0.5 * d_max && p.0 < d_max * (1.0 - 1e-9)) {
        sigma = sigma.min((top - p.1) / (d_max - p.0));
    }
    if !sigma.is_finite() {
        sigma = if d_max > 0.0 { top / d_max } else { 0.0 };
    }
    let alpha = sigma.max(0.0);
    let mut k = 1.0f64;
    let mut worst = (flow.grid[0], flow.grid[0]);
    for p in &pts {
        let c = (p.1 - alpha * p.0).exp();
        if c > k {
            k = c;
            worst = (p.2, p.3);
        }
    }
    Ok(GrowthFit { mode, k, alpha, worst_pair: worst, unbounded: false })
}

/// Writes `t, x1..xn` rows (or `t, X_11..X_nn` for matrix trajectories,
/// row-major) with 17 significant digits.
pub fn trajectory_csv(times: &[f64], states: &[Vec<f64>], matrix_dim: Option<usize>) -> String {
    let width = states.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    match matrix_dim {
        Some(n) => {
            for i in 1..=n {
                for j in 1..=n {
                    out.push_str(&format!(",X_{i}{j}"));
                }
            }
        }
        None => (1..=width).for_each(|i| out.push_str(&format!(",x{i}"))),
    }
    out.push('\n');
    for (t, s) in times.iter().zip(states) {
        out.push_str(&format!("{t:.16e}"));
        match matrix_dim {
            Some(n) => {
                // stored column-major; emit row-major
                for i in 0..n {
                    for j in 0..n {
                        out.push_str(&format!(",{:.16e}", s[j * n + i]));
                    }
                }
            }
            None => s.iter().for_each(|v| out.push_str(&format!(",{v:.16e}"))),
        }
        out.push('\n');
    }
    out
}
