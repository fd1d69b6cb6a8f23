//! Topological equivalence between `x' = A(t) x` and `y' = A(t) y + f(t, y)`.
//!
//! `H(t, xi)` sends the linear solution through `(t, xi)` to a solution of
//! the perturbed equation, `G(t, eta)` goes the other way. On the full line
//! both are built from the Green kernel of a certified dichotomy; on the
//! half line with projector `I` they reduce to integrals over `[0, t]`.

use serde::Serialize;

use crate::dichotomy::{
    green_apply, lipschitz_fixed_point, DichotomyCertificate, FixedPointOptions, GreenOptions,
};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::ode::{self, OdeOptions, Trajectory};
use crate::propagate;
use crate::system::QuasilinearSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearizationMode {
    FullLine,
    HalfLinePlus,
}

#[derive(Debug, Clone)]
pub struct LinearizationContext {
    pub quasi: QuasilinearSystem,
    pub cert: DichotomyCertificate,
    /// `q = 2 K gamma / alpha`.
    pub gap_factor: f64,
    pub eps: f64,
    /// Truncation half-width `L(eps) = ln(2 mu K / (alpha eps)) / alpha`.
    pub window: f64,
    pub mode: LinearizationMode,
    /// Grid spacing of the full-line Green operator.
    pub step: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapEvaluation {
    pub t: f64,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub iterations: usize,
    /// Estimated distance of `output` from the exact map value.
    pub residual: f64,
}

impl MapEvaluation {
    pub fn output_vec(&self) -> Vector {
        Vector::from_column_slice(&self.output)
    }

    /// `|output - input|`.
    pub fn displacement(&self) -> f64 {
        self.output.iter().zip(&self.input).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Checks the hypotheses and fixes the window.
pub fn make_context(
    quasi: &QuasilinearSystem,
    cert: &DichotomyCertificate,
    eps: f64,
    mode: LinearizationMode,
) -> Result<LinearizationContext> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    if cert.projector.dim() != quasi.dim() {
        return Err(Error::Shape(format!(
            "certificate is for dimension {}, system dimension is {}",
            cert.projector.dim(),
            quasi.dim()
        )));
    }
    if !cert.is_verified() {
        return Err(Error::CertificateRequired);
    }
    let q = 2.0 * cert.k * quasi.gamma / cert.alpha;
    if !(q < 1.0) {
        return Err(Error::GapViolation { q });
    }
    if mode == LinearizationMode::HalfLinePlus && cert.projector.rank != quasi.dim() {
        return Err(Error::ProjectorMismatch(format!(
            "the half-line maps need projector I, the certificate has rank {} of {}",
            cert.projector.rank,
            quasi.dim()
        )));
    }
    let window = truncation_window(quasi.mu, cert.k, cert.alpha, eps);
    Ok(LinearizationContext {
        quasi: quasi.clone(),
        cert: cert.clone(),
        gap_factor: q,
        eps,
        window,
        mode,
        step: 0.05,
        max_iter: 100,
    })
}

/// `L(eps) = ln(2 mu K / (alpha eps)) / alpha`, never negative.
pub fn truncation_window(mu: f64, k: f64, alpha: f64, eps: f64) -> f64 {
    ((2.0 * mu * k / (alpha * eps)).ln() / alpha).max(0.0)
}

impl LinearizationContext {
    fn ode_tol(&self) -> f64 {
        (self.eps * 1e-4).max(1e-13)
    }

    /// The Green window, at least a few grid steps wide even when `mu = 0`.
    fn green_window(&self) -> f64 {
        self.window.max(4.0 * self.step)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if self.mode == LinearizationMode::HalfLinePlus && t < 0.0 {
            return Err(Error::Domain { t, domain: "[0, inf)".into() });
        }
        self.quasi.linear.check_time(t)
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.quasi.dim() {
            return Err(Error::Shape(format!("point has {} components, system dimension is {}", p.len(), self.quasi.dim())));
        }
        Ok(())
    }

    /// `2 mu K / alpha`, the bound on `|H - id|` and `|G - id|`.
    pub fn displacement_bound(&self) -> f64 {
        2.0 * self.quasi.mu * self.cert.k / self.cert.alpha
    }

    /// Picard iteration count bound for a first change `c0`.
    pub fn iteration_bound(&self, c0: f64) -> usize {
        let stop = self.eps * (1.0 - self.gap_factor);
        if c0 <= stop || self.gap_factor == 0.0 {
            1
        } else {
            ((stop / c0).ln() / self.gap_factor.ln()).ceil().max(0.0) as usize + 1
        }
    }

    /// Lipschitz constant `Theta` of `G(t, .)`:
    /// `1 + c K gamma e^{(M + gamma) L} (1 - e^{-alpha L}) / alpha` with
    /// `c = 2` and `L` the window on the full line, `c = 1` and `L = t` on
    /// the half line.
    pub fn theta(&self, t: f64) -> f64 {
        let (k, a, g, m) = (self.cert.k, self.cert.alpha, self.quasi.gamma, self.cert.m_bound);
        let (c, l) = match self.mode {
            LinearizationMode::FullLine => (2.0, self.window),
            LinearizationMode::HalfLinePlus => (1.0, t.max(0.0)),
        };
        1.0 + c * k * g * ((m + g) * l).exp() * (1.0 - (-a * l).exp()) / a
    }
}

fn linear_rhs<'a>(ctx: &'a LinearizationContext) -> impl FnMut(f64, &[f64], &mut [f64]) + Clone + 'a {
    move |s, y, dy| {
        let v = ctx.quasi.linear.coeff_unchecked(s) * Vector::from_column_slice(y);
        dy.copy_from_slice(v.as_slice());
    }
}

fn nonlinear_rhs<'a>(ctx: &'a LinearizationContext) -> impl FnMut(f64, &[f64], &mut [f64]) + Clone + 'a {
    move |s, y, dy| {
        let v = ctx.quasi.linear.coeff_unchecked(s) * Vector::from_column_slice(y) + ctx.quasi.f(s, y);
        dy.copy_from_slice(v.as_slice());
    }
}

/// A solution through `(t, p)` on `[a, b]`, integrated both ways from `t`.
struct TwoSided {
    t: f64,
    p: Vec<f64>,
    back: Option<Trajectory>,
    fwd: Option<Trajectory>,
}

impl TwoSided {
    fn new<F: FnMut(f64, &[f64], &mut [f64]) + Clone>(rhs: F, t: f64, p: &[f64], a: f64, b: f64, tol: f64) -> Result<Self> {
        let opts = OdeOptions::with_tol(tol);
        let back = if a < t { Some(ode::solve(rhs.clone(), t, p, a, &opts)?) } else { None };
        let fwd = if b > t { Some(ode::solve(rhs, t, p, b, &opts)?) } else { None };
        Ok(Self { t, p: p.to_vec(), back, fwd })
    }

    fn at(&self, s: f64) -> Vec<f64> {
        let tr = if s < self.t { &self.back } else { &self.fwd };
        match tr {
            Some(tr) if s != self.t => tr.at(s),
            _ => self.p.clone(),
        }
    }
}

/// `H(t, xi)`.
pub fn eval_h(ctx: &LinearizationContext, t: f64, xi: &[f64]) -> Result<MapEvaluation> {
    ctx.check_time(t)?;
    ctx.check_point(xi)?;
    match ctx.mode {
        LinearizationMode::HalfLinePlus => eval_h_half(ctx, t, xi),
        LinearizationMode::FullLine => eval_h_full(ctx, t, xi),
    }
}

/// `G(t, eta)`.
pub fn eval_g(ctx: &LinearizationContext, t: f64, eta: &[f64]) -> Result<MapEvaluation> {
    ctx.check_time(t)?;
    ctx.check_point(eta)?;
    match ctx.mode {
        LinearizationMode::HalfLinePlus => eval_g_half(ctx, t, eta),
        LinearizationMode::FullLine => eval_g_full(ctx, t, eta),
    }
}

/// Sample times for sup-norm changes on `[0, t]`.
fn sample_times(t: f64) -> Vec<f64> {
    let m = ((t / 0.05).ceil() as usize).clamp(1, 2000);
    (0..=m).map(|k| t * k as f64 / m as f64).collect()
}

/// Picard scheme `z_{j+1}(s) = int_0^s X(s, r) f(r, x(r) + z_j(r)) dr`,
/// `z_0 = 0`, with `x` the linear solution through `(t, xi)`.
///
/// The first `J` iterates satisfy `z_{j+1}' = A z_{j+1} + f(s, x + z_j)`,
/// `z_{j+1}(0) = 0`, so they are integrated together with `x` as one smooth
/// system of dimension `n (J + 1)`. `J` doubles until two consecutive
/// iterates differ by at most `eps (1 - q)` in the sup norm on `[0, t]`.
fn eval_h_half(ctx: &LinearizationContext, t: f64, xi: &[f64]) -> Result<MapEvaluation> {
    let n = xi.len();
    if t == 0.0 {
        return Ok(MapEvaluation { t, input: xi.to_vec(), output: xi.to_vec(), iterations: 1, residual: 0.0 });
    }
    let tol = ctx.ode_tol();
    let x0 = ode::solve(linear_rhs(ctx), t, xi, 0.0, &OdeOptions::with_tol(tol))?.final_state().to_vec();
    let samples = sample_times(t);
    let stop = ctx.eps * (1.0 - ctx.gap_factor);
    let mut depth = 6.min(ctx.max_iter);
    loop {
        let rhs = |s: f64, u: &[f64], du: &mut [f64]| {
            let a = ctx.quasi.linear.coeff_unchecked(s);
            for j in 0..=depth {
                let block = Vector::from_column_slice(&u[j * n..(j + 1) * n]);
                let mut v = &a * block;
                if j > 0 {
                    let arg: Vec<f64> = if j == 1 {
                        u[..n].to_vec()
                    } else {
                        (0..n).map(|i| u[i] + u[(j - 1) * n + i]).collect()
                    };
                    v += ctx.quasi.f(s, &arg);
                }
                du[j * n..(j + 1) * n].copy_from_slice(v.as_slice());
            }
        };
        let mut init = vec![0.0; n * (depth + 1)];
        init[..n].copy_from_slice(&x0);
        let tr = ode::solve(rhs, 0.0, &init, t, &OdeOptions::with_tol(tol))?;
        // changes[j - 1] = sup |z_j - z_{j-1}|
        let mut changes = vec![0.0f64; depth];
        for &s in &samples {
            let u = tr.at(s);
            for j in 1..=depth {
                let d = (0..n)
                    .map(|i| {
                        let prev = if j == 1 { 0.0 } else { u[(j - 1) * n + i] };
                        (u[j * n + i] - prev).abs()
                    })
                    .fold(0.0, f64::max);
                changes[j - 1] = changes[j - 1].max(d);
            }
        }
        if let Some(j) = changes.iter().position(|&c| c <= stop).map(|k| k + 1) {
            let u = tr.final_state();
            let output: Vec<f64> = (0..n).map(|i| xi[i] + u[j * n + i]).collect();
            let residual = changes[j - 1] * ctx.gap_factor / (1.0 - ctx.gap_factor) + tol;
            return Ok(MapEvaluation { t, input: xi.to_vec(), output, iterations: j, residual });
        }
        if depth >= ctx.max_iter {
            return Err(Error::NoConvergence { iterations: depth, change: changes[depth - 1] });
        }
        depth = (2 * depth).min(ctx.max_iter);
    }
}

/// `G(t, eta) = eta - int_0^t X(t, s) f(s, y(s, t, eta)) ds`. By variation of
/// constants the integral equals `eta - X(t, 0) y(0, t, eta)`, so `G` sends
/// `eta` to the linear solution through `(0, y(0, t, eta))`, evaluated at `t`.
fn eval_g_half(ctx: &LinearizationContext, t: f64, eta: &[f64]) -> Result<MapEvaluation> {
    if t == 0.0 {
        return Ok(MapEvaluation { t, input: eta.to_vec(), output: eta.to_vec(), iterations: 1, residual: 0.0 });
    }
    let tol = ctx.ode_tol();
    let y0 = ode::solve(nonlinear_rhs(ctx), t, eta, 0.0, &OdeOptions::with_tol(tol))?.final_state().to_vec();
    let output = ode::solve(linear_rhs(ctx), 0.0, &y0, t, &OdeOptions::with_tol(tol))?.final_state().to_vec();
    Ok(MapEvaluation { t, input: eta.to_vec(), output, iterations: 1, residual: tol })
}

fn green_options(ctx: &LinearizationContext) -> GreenOptions {
    GreenOptions { tol: ctx.eps, window: Some(ctx.green_window()), step: ctx.step }
}

/// `H(t, xi) = xi + z(t)` with `z` the bounded solution of
/// `z' = A z + f(s, x(s) + z)`, found by the Green-operator fixed point.
fn eval_h_full(ctx: &LinearizationContext, t: f64, xi: &[f64]) -> Result<MapEvaluation> {
    let reach = ctx.green_window() + 2.0 * ctx.step + 1.0;
    let x = TwoSided::new(linear_rhs(ctx), t, xi, t - reach, t + reach, ctx.ode_tol())?;
    let h = |s: f64, z: &[f64]| {
        let arg: Vec<f64> = x.at(s).iter().zip(z).map(|(a, b)| a + b).collect();
        ctx.quasi.f(s, &arg)
    };
    let opts = FixedPointOptions { tol: ctx.eps, max_iter: ctx.max_iter, step: ctx.step, window: Some(ctx.green_window()) };
    let fp = lipschitz_fixed_point(&ctx.quasi.linear, &ctx.cert, &h, ctx.quasi.gamma, t, t, &opts)?;
    let z = fp.at(t);
    let output: Vec<f64> = xi.iter().zip(z.iter()).map(|(a, b)| a + b).collect();
    let residual = fp.residual + ctx.eps;
    Ok(MapEvaluation { t, input: xi.to_vec(), output, iterations: fp.iterations, residual })
}

/// `G(t, eta) = eta + chi(t)` with `chi` the bounded solution of
/// `chi' = A chi - f(s, y(s, t, eta))`.
fn eval_g_full(ctx: &LinearizationContext, t: f64, eta: &[f64]) -> Result<MapEvaluation> {
    let reach = ctx.green_window() + 2.0 * ctx.step + 1.0;
    let y = TwoSided::new(nonlinear_rhs(ctx), t, eta, t - reach, t + reach, ctx.ode_tol())?;
    let g = |s: f64| -ctx.quasi.f(s, &y.at(s));
    let v = green_apply(&ctx.quasi.linear, &ctx.cert, &g, t, &green_options(ctx))?;
    let output: Vec<f64> = eta.iter().zip(v.x.iter()).map(|(a, b)| a + b).collect();
    Ok(MapEvaluation { t, input: eta.to_vec(), output, iterations: 1, residual: v.truncation_bound })
}

/// `max(|G(t, H(t, p)) - p|, |H(t, G(t, p)) - p|)`.
pub fn inverse_residual(ctx: &LinearizationContext, t: f64, p: &[f64]) -> Result<f64> {
    let pv = Vector::from_column_slice(p);
    let gh = eval_g(ctx, t, &eval_h(ctx, t, p)?.output)?;
    let hg = eval_h(ctx, t, &eval_g(ctx, t, p)?.output)?;
    Ok((gh.output_vec() - &pv).norm().max((hg.output_vec() - &pv).norm()))
}

/// Largest `|y(t) - H(t, x(t))|` over 11 sample times of
/// `[tau, tau + horizon]`, where `x` is the linear solution through
/// `(tau, xi)` and `y` the perturbed one through `(tau, H(tau, xi))`.
pub fn conjugacy_residual(ctx: &LinearizationContext, tau: f64, xi: &[f64], horizon: f64) -> Result<f64> {
    ctx.check_time(tau)?;
    ctx.quasi.linear.check_time(tau + horizon)?;
    let tol = ctx.ode_tol();
    let h0 = eval_h(ctx, tau, xi)?;
    let x = ode::solve(linear_rhs(ctx), tau, xi, tau + horizon, &OdeOptions::with_tol(tol))?;
    let y = ode::solve(nonlinear_rhs(ctx), tau, &h0.output, tau + horizon, &OdeOptions::with_tol(tol))?;
    let mut worst = 0.0f64;
    for k in 1..=10 {
        let t = tau + horizon * k as f64 / 10.0;
        let ht = eval_h(ctx, t, &x.at(t))?;
        let d = (ht.output_vec() - Vector::from_vec(y.at(t))).norm();
        worst = worst.max(d);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct GJacobian {
    #[serde(with = "crate::linalg::mat_rows")]
    pub matrix: Mat,
    pub determinant: f64,
}

/// `dG/deta (t, eta) = X(t, 0) dy(0, t, eta)/deta`, with the variational
/// equation `V' = (A + D_y f(s, y)) V`, `V(t) = I` integrated back to 0
/// alongside `y`. Half-line mode only.
pub fn g_jacobian(ctx: &LinearizationContext, t: f64, eta: &[f64]) -> Result<GJacobian> {
    if ctx.mode != LinearizationMode::HalfLinePlus {
        return Err(Error::InvalidInput("the Jacobian of G is computed in half-line mode".into()));
    }
    ctx.check_time(t)?;
    ctx.check_point(eta)?;
    let n = eta.len();
    if t == 0.0 {
        return Ok(GJacobian { matrix: Mat::identity(n, n), determinant: 1.0 });
    }
    let tol = ctx.ode_tol();
    let mut init = eta.to_vec();
    init.extend(Mat::identity(n, n).as_slice());
    let rhs = |s: f64, u: &[f64], du: &mut [f64]| {
        let a = ctx.quasi.linear.coeff_unchecked(s);
        let y = &u[..n];
        let dy = &a * Vector::from_column_slice(y) + ctx.quasi.f(s, y);
        du[..n].copy_from_slice(dy.as_slice());
        let v = Mat::from_column_slice(n, n, &u[n..]);
        let dv = (a + ctx.quasi.jacobian_f(s, y)) * v;
        du[n..].copy_from_slice(dv.as_slice());
    };
    let tr = ode::solve(rhs, t, &init, 0.0, &OdeOptions::with_tol(tol))?;
    let v0 = Mat::from_column_slice(n, n, &tr.final_state()[n..]);
    let x = propagate::transition_matrix(&ctx.quasi.linear, t, 0.0, tol)?.x;
    let matrix = x * v0;
    let determinant = matrix.determinant();
    if !(determinant > 0.0) {
        return Err(Error::NumericalInconsistency(format!("det dG/deta = {determinant:e} is not positive")));
    }
    Ok(GJacobian { matrix, determinant })
}

/// `t,p1..pn,out1..outn,iterations,residual` lines, 17 significant digits.
pub fn batch_csv(evals: &[MapEvaluation]) -> String {
    let n = evals.first().map(|e| e.input.len()).unwrap_or(0);
    let mut s = String::from("t");
    (1..=n).for_each(|i| s.push_str(&format!(",p{i}")));
    (1..=n).for_each(|i| s.push_str(&format!(",out{i}")));
    s.push_str(",iterations,residual\n");
    for e in evals {
        s.push_str(&format!("{:.16e}", e.t));
        for v in e.input.iter().chain(&e.output) {
            s.push_str(&format!(",{v:.16e}"));
        }
        s.push_str(&format!(",{},{:.16e}\n", e.iterations, e.residual));
    }
    s
}
