//! Explicit Runge–Kutta integration with the Dormand–Prince 5(4) pair.
//!
//! Step sizes follow a proportional-integral controller and every accepted
//! step keeps the coefficients of the pair's continuous extension, so a
//! [`Trajectory`] can be evaluated anywhere in its time span. Integration
//! toward smaller times runs the reflected field `g(u, y) = -f(-u, y)` in
//! the increasing variable `u = -t`; the stored times are always the real
//! ones.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// States beyond this magnitude count as a blowup.
const BLOWUP: f64 = 1e250;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on the step length; infinite by default.
    pub h_max: f64,
    /// Keep the continuous extension of each step.
    pub dense: bool,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }

    pub fn h_max(mut self, h: f64) -> Self {
        self.h_max = h;
        self
    }

    pub fn sparse(mut self) -> Self {
        self.dense = false;
        self
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-9, max_steps: 2_000_000, h_max: f64::INFINITY, dense: true }
    }
}

/// Accepted steps of an integration with their continuous extensions.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    /// Five coefficient vectors per step, stored contiguously.
    dense: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Sum over accepted steps of the largest componentwise local error.
    pub err_est: f64,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_forward(&self) -> bool {
        self.t_end() >= self.t0()
    }

    pub fn has_dense(&self) -> bool {
        !self.dense.is_empty() || self.times.len() == 1
    }

    /// Interpolated state at `t`, which must lie in the covered span.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.at_into(t, &mut out);
        out
    }

    pub fn at_into(&self, t: f64, out: &mut [f64]) {
        let n = self.dim;
        let steps = self.times.len() - 1;
        if steps == 0 {
            out.copy_from_slice(self.state(0));
            return;
        }
        assert!(!self.dense.is_empty(), "trajectory was computed without dense output");
        let forward = self.is_forward();
        let key = |x: f64| if forward { x } else { -x };
        let kt = key(t);
        // index of the step containing t
        let k = match self.times.binary_search_by(|x| key(*x).total_cmp(&kt)) {
            Ok(i) => {
                if i == steps {
                    out.copy_from_slice(self.state(steps));
                    return;
                }
                out.copy_from_slice(self.state(i));
                return;
            }
            Err(0) => 0,
            Err(i) if i > steps => steps - 1,
            Err(i) => i - 1,
        };
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let theta = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let base = 5 * n * k;
        let r = &self.dense[base..base + 5 * n];
        for i in 0..n {
            out[i] = r[i] + theta * (r[n + i] + theta1 * (r[2 * n + i] + theta * (r[3 * n + i] + theta1 * r[4 * n + i])));
        }
    }
}

struct Work {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `f(t, y, dy)` writes the derivative into `dy`.
pub fn solve<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerances must be positive (rtol={}, atol={})", opts.rtol, opts.atol)));
    }
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInput("integration limits must be finite".into()));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state has non-finite entries".into()));
    }
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut traj = Trajectory {
        dim: n,
        times: vec![t0],
        states: y0.to_vec(),
        dense: Vec::new(),
        accepted: 0,
        rejected: 0,
        evaluations: 0,
        err_est: 0.0,
    };
    if t1 == t0 {
        return Ok(traj);
    }
    // reflected field in the increasing variable u = dir * t
    let mut g = |u: f64, y: &[f64], dy: &mut [f64]| {
        f(dir * u, y, dy);
        if dir < 0.0 {
            dy.iter_mut().for_each(|v| *v = -*v);
        }
    };
    let (u_end, mut u) = (dir * t1, dir * t0);
    let mut y = y0.to_vec();
    let mut w = Work { k: std::array::from_fn(|_| vec![0.0; n]), ytmp: vec![0.0; n], ynew: vec![0.0; n] };

    g(u, &y, &mut w.k[0]);
    traj.evaluations += 1;
    let mut h = initial_step(&mut g, u, &y, &w.k[0], u_end - u, opts, &mut traj.evaluations);
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let mut nonfinite_streak = 0;
    let span = (u_end - u).abs();

    loop {
        if traj.accepted + traj.rejected >= opts.max_steps {
            return Err(Error::StepBudget { steps: opts.max_steps, t: dir * u });
        }
        let mut last = false;
        if u + h >= u_end || (u_end - u - h) < 1e-12 * span {
            h = u_end - u;
            last = true;
        }
        if h <= 1e-14 * u.abs().max(1.0) || h < f64::MIN_POSITIVE {
            return Err(Error::StiffnessFailure { t: dir * u });
        }
        let err = dopri_step(&mut g, u, &y, h, &mut w, opts);
        traj.evaluations += 6;
        let finite = err.is_finite() && w.ynew.iter().all(|v| v.is_finite());
        if !finite {
            nonfinite_streak += 1;
            if nonfinite_streak >= 20 {
                return Err(Error::Blowup { t: dir * u });
            }
            traj.rejected += 1;
            h *= 0.1;
            last_rejected = true;
            continue;
        }
        nonfinite_streak = 0;
        let expo1 = 0.2 - 0.04 * 0.75;
        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let mut fac = fac11 / facold.powf(0.04);
            fac = (fac / 0.9).clamp(1.0 / 10.0, 5.0);
            let mut hnew = h / fac;
            facold = err.max(1e-4);
            traj.accepted += 1;
            traj.err_est += local_error_abs(&w, h);
            if opts.dense {
                push_dense(&mut traj.dense, &y, &w, h);
            }
            u += h;
            std::mem::swap(&mut y, &mut w.ynew);
            // first-same-as-last: k7 is f at the new point
            w.k.swap(0, 6);
            traj.times.push(if last { t1 } else { dir * u });
            traj.states.extend_from_slice(&y);
            if y.iter().any(|v| v.abs() > BLOWUP) {
                return Err(Error::Blowup { t: dir * u });
            }
            if last {
                return Ok(traj);
            }
            if last_rejected {
                hnew = hnew.min(h);
            }
            last_rejected = false;
            h = hnew.min(opts.h_max);
        } else {
            traj.rejected += 1;
            h /= (fac11 / 0.9).min(5.0);
            last_rejected = true;
        }
    }
}

fn local_error_abs(w: &Work, h: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..w.ytmp.len() {
        let e = h * (E1 * w.k[0][i] + E3 * w.k[2][i] + E4 * w.k[3][i] + E5 * w.k[4][i] + E6 * w.k[5][i] + E7 * w.k[6][i]);
        worst = worst.max(e.abs());
    }
    worst
}

fn push_dense(dense: &mut Vec<f64>, y0: &[f64], w: &Work, h: f64) {
    let n = y0.len();
    let start = dense.len();
    dense.resize(start + 5 * n, 0.0);
    let r = &mut dense[start..];
    let k = &w.k;
    for i in 0..n {
        let y1 = w.ynew[i];
        let ydiff = y1 - y0[i];
        let bspl = h * k[0][i] - ydiff;
        r[i] = y0[i];
        r[n + i] = ydiff;
        r[2 * n + i] = bspl;
        r[3 * n + i] = ydiff - h * k[6][i] - bspl;
        r[4 * n + i] = h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
    }
}

/// One Dormand–Prince step from `(u, y)` with `k[0] = g(u, y)` already set.
/// Leaves the new state in `w.ynew`, `k[6] = g(u + h, ynew)`, and returns
/// the scaled RMS error.
fn dopri_step<G>(g: &mut G, u: f64, y: &[f64], h: f64, w: &mut Work, opts: &OdeOptions) -> f64
where
    G: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Work { k, ytmp, ynew } = w;
    for i in 0..n {
        ytmp[i] = y[i] + h * A21 * k[0][i];
    }
    g(u + C2 * h, ytmp, &mut k[1]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    g(u + C3 * h, ytmp, &mut k[2]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    g(u + C4 * h, ytmp, &mut k[3]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    g(u + C5 * h, ytmp, &mut k[4]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    g(u + h, ytmp, &mut k[5]);
    for i in 0..n {
        ynew[i] = y[i] + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    g(u + h, ynew, &mut k[6]);
    let mut err = 0.0;
    for i in 0..n {
        let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
        err += (e / sc).powi(2);
    }
    (err / n.max(1) as f64).sqrt()
}

fn initial_step<G>(g: &mut G, u: f64, y: &[f64], f0: &[f64], span: f64, opts: &OdeOptions, evals: &mut usize) -> f64
where
    G: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len().max(1) as f64;
    let sc = |i: usize| opts.atol + opts.rtol * y[i].abs();
    let dnf = (0..y.len()).map(|i| (f0[i] / sc(i)).powi(2)).sum::<f64>() / n;
    let dny = (0..y.len()).map(|i| (y[i] / sc(i)).powi(2)).sum::<f64>() / n;
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
    h = h.min(opts.h_max).min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h * b).collect();
    let mut f1 = vec![0.0; y.len()];
    g(u + h, &y1, &mut f1);
    *evals += 1;
    let der2 = ((0..y.len()).map(|i| ((f1[i] - f0[i]) / sc(i)).powi(2)).sum::<f64>() / n).sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (1e-6f64).max(h * 1e-3) } else { (0.01 / der12).powf(0.2) };
    let h = (100.0 * h).min(h1).min(opts.h_max).min(span);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6f64.min(span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_gives_constant_trajectory() {
        let tr = solve(|_, _, dy| dy.fill(0.0), 0.0, &[1.0, -2.0], 7.0, &OdeOptions::with_tol(1e-10)).unwrap();
        assert_eq!(tr.final_state(), &[1.0, -2.0]);
        assert_eq!(tr.at(3.3), vec![1.0, -2.0]);
    }

    #[test]
    fn exponential_growth() {
        let tol = 1e-10;
        let tr = solve(|_, y, dy| dy[0] = y[0], 0.0, &[1.0], 1.0, &OdeOptions::with_tol(tol)).unwrap();
        assert!((tr.final_state()[0] - std::f64::consts::E).abs() < 100.0 * tol);
        assert_eq!(tr.t_end(), 1.0);
    }

    #[test]
    fn dense_output_is_accurate() {
        let tr = solve(|t, _, dy| dy[0] = t.cos(), 0.0, &[0.0], 10.0, &OdeOptions::with_tol(1e-10)).unwrap();
        for k in 0..=100 {
            let t = 0.1 * k as f64;
            assert!((tr.at(t)[0] - t.sin()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn backward_integration() {
        let tr = solve(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], -2.0, &OdeOptions::with_tol(1e-10)).unwrap();
        assert!((tr.final_state()[0] - 2f64.exp()).abs() < 1e-8);
        assert!(tr.times().windows(2).all(|w| w[1] < w[0]));
        assert!((tr.at(-1.0)[0] - 1f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn blowup_is_reported() {
        // y' = t y grows like e^{t^2/2}
        let err = solve(|t, y, dy| dy[0] = t * y[0], 0.0, &[1.0], 1e9, &OdeOptions::with_tol(1e-8)).unwrap_err();
        match err {
            Error::Blowup { t } => assert!(t > 20.0 && t < 40.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_budget() {
        let opts = OdeOptions { max_steps: 5, ..OdeOptions::with_tol(1e-12) };
        let err = solve(|t, _, dy| dy[0] = (50.0 * t).sin(), 0.0, &[0.0], 100.0, &opts).unwrap_err();
        assert!(matches!(err, Error::StepBudget { steps: 5, .. }));
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(solve(|_, _, dy| dy.fill(0.0), 0.0, &[0.0], 1.0, &OdeOptions::with_tol(0.0)).is_err());
    }
}
