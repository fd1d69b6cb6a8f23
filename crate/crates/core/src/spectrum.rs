//! Dichotomy spectrum on a finite horizon.
//!
//! A discrete QR sweep brings the system to upper triangular form; the
//! windowed Bohl exponents of the diagonal give candidate intervals, and the
//! shifted systems `A(t) - lambda I` are certified directly as a cross-check.

use serde::Serialize;

use crate::dichotomy::{
    self, certify_bases, qr_positive, random_frame, refine, split_flows, sweep_frames, CertifyOptions, SplitOptions,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::propagate::{self, coefficient_growth, SampledFlow};
use crate::quadrature;
use crate::system::{Domain, LinearSystem};

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    /// Grid step of the triangularization.
    pub step: f64,
    /// Intervals closer than this merge; `2 / L` when unset.
    pub merge_eps: Option<f64>,
    /// Window averages beyond this magnitude, with a trend, mark an
    /// unbounded end.
    pub unbounded_cap: f64,
    /// Least-squares slope of the window averages that counts as a trend.
    pub trend_threshold: f64,
    /// Coarse grid step of the shifted-system certificates.
    pub shift_step: f64,
    pub split: SplitOptions,
    pub certify: CertifyOptions,
    pub tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            merge_eps: None,
            unbounded_cap: 10.0,
            trend_threshold: 0.05,
            shift_step: 0.1,
            split: SplitOptions::default(),
            certify: CertifyOptions::default(),
            tol: 1e-10,
        }
    }
}

/// `x = Q(t) y` with orthogonal `Q` and upper triangular `B`, sampled on a
/// grid.
#[derive(Debug, Clone)]
pub struct TriangularReduction {
    pub grid: Vec<f64>,
    /// `Q(t_k)` at every node.
    pub q_samples: Vec<Mat>,
    /// Step averages of `b_ii` over `[t_k, t_{k+1}]`, one row per step.
    pub b_diag: Vec<Vec<f64>>,
    /// Largest `|B|_2` over the step averages of `B`.
    pub offdiag_bound: f64,
}

impl TriangularReduction {
    /// Time average of each `b_ii` over the whole grid.
    pub fn mean_diagonal(&self) -> Vec<f64> {
        let n = self.q_samples[0].nrows();
        let span = self.grid[self.grid.len() - 1] - self.grid[0];
        (0..n)
            .map(|i| self.b_diag.iter().zip(self.grid.windows(2)).map(|(b, w)| b[i] * (w[1] - w[0])).sum::<f64>() / span)
            .collect()
    }

    /// `int_{t_0}^{t_k} b_ii` at every node, for each `i`.
    fn cumulative(&self, i: usize) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (b, w) in self.b_diag.iter().zip(self.grid.windows(2)) {
            acc += b[i] * (w[1] - w[0]);
            out.push(acc);
        }
        out
    }
}

/// Discrete QR triangularization starting from `Q(t_0) = I`:
/// `X(t_{k+1}, t_k) Q_k = Q_{k+1} R_k`, with `B` over the step recovered as
/// `log(R_k) / h_k` and `b_ii = ln r_ii / h_k`.
pub fn perron_triangularize(sys: &LinearSystem, grid: &[f64], tol: f64) -> Result<TriangularReduction> {
    let flow = SampledFlow::new(sys, grid, grid[0], tol)?;
    triangularize_flow(&flow)
}

fn triangularize_flow(flow: &SampledFlow) -> Result<TriangularReduction> {
    let n = flow.dim();
    let mut q = Mat::identity(n, n);
    let mut q_samples = vec![q.clone()];
    let mut b_diag = Vec::with_capacity(flow.steps.len());
    let mut offdiag_bound = 0.0f64;
    for (m, w) in flow.steps.iter().zip(flow.grid.windows(2)) {
        let h = w[1] - w[0];
        let z = m * &q;
        let scale = linalg::norm2(&z).max(f64::MIN_POSITIVE);
        let (nq, logs) = qr_positive(z.clone());
        let r = nq.transpose() * &z;
        for (j, l) in logs.iter().enumerate() {
            let residual = l.exp() / scale;
            if !(residual > 1e-14) {
                return Err(Error::DegenerateBasis { column: j, residual });
            }
        }
        let b = linalg::principal_log(&r)?.real_part() / h;
        offdiag_bound = offdiag_bound.max(linalg::norm2(&b));
        b_diag.push(logs.iter().map(|l| l / h).collect());
        q = nq;
        q_samples.push(q.clone());
    }
    Ok(TriangularReduction { grid: flow.grid.clone(), q_samples, b_diag, offdiag_bound })
}

/// Lower and upper Bohl exponents over windows of length `window` starting
/// in `[T/2, T - window]`.
#[derive(Debug, Clone, Serialize)]
pub struct BohlPair {
    pub beta_minus: f64,
    pub beta_plus: f64,
    /// The averages keep falling past the magnitude cap: `beta_minus = -inf`.
    pub unbounded_below: bool,
    /// The averages keep rising past the magnitude cap: `beta_plus = +inf`.
    pub unbounded_above: bool,
    pub window: f64,
    pub start: f64,
    pub horizon: f64,
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
    let (t0, t1) = (times[k - 1], times[k]);
    let u = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    values[k - 1] + u * (values[k] - values[k - 1])
}

/// Bohl pair from the running integral `cum` of `a` on `times` (which start
/// at 0 and end at the horizon).
fn bohl_from_cumulative(times: &[f64], cum: &[f64], window: f64, opts: &SpectrumOptions) -> Result<BohlPair> {
    let horizon = times[times.len() - 1] - times[0];
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidInput(format!("window must be positive, got {window}")));
    }
    if horizon < 2.0 * window {
        return Err(Error::HorizonTooShort { horizon, window });
    }
    let start = times[0] + 0.5 * horizon;
    let span = times[times.len() - 1] - window - start;
    let end = times[times.len() - 1];
    let slack = 1e-9 * horizon;
    let mut starts: Vec<f64> =
        times.iter().copied().filter(|&t| t >= start - slack && t + window <= end + slack).collect();
    if starts.is_empty() {
        starts = vec![start, start + span];
    }
    let averages: Vec<f64> =
        starts.iter().map(|&s| (interp(times, cum, s + window) - interp(times, cum, s)) / window).collect();
    let beta_minus = averages.iter().copied().fold(f64::INFINITY, f64::min);
    let beta_plus = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let trend = dichotomy::ls_slope(&starts, &averages);
    Ok(BohlPair {
        beta_minus,
        beta_plus,
        unbounded_below: trend < -opts.trend_threshold && beta_minus < -opts.unbounded_cap,
        unbounded_above: trend > opts.trend_threshold && beta_plus > opts.unbounded_cap,
        window,
        start,
        horizon,
    })
}

/// Bohl exponents of a scalar coefficient on `[0, T]`.
pub fn scalar_bohl(a: &dyn Fn(f64) -> f64, horizon: f64, window: f64, opts: &SpectrumOptions) -> Result<BohlPair> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    // a step dividing the window puts both ends of every window on nodes
    let per_window = (window / opts.step.min(window / 50.0)).ceil().min(200_000.0);
    let h = window / per_window;
    let mut times: Vec<f64> = (0..).map(|k| k as f64 * h).take_while(|&t| t < horizon - 1e-9 * h).collect();
    times.push(horizon);
    let cum = quadrature::cumulative(a, &times, opts.tol);
    bohl_from_cumulative(&times, &cum, window, opts)
}

/// A spectral interval; the bounds are finite estimates and the flags mark
/// ends that run off to infinity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralInterval {
    pub bounds: [f64; 2],
    pub unbounded_left: bool,
    pub unbounded_right: bool,
    /// Number of diagonal entries whose Bohl intervals merged into this one.
    pub multiplicity: usize,
}

impl SpectralInterval {
    fn lo(&self) -> f64 {
        if self.unbounded_left {
            f64::NEG_INFINITY
        } else {
            self.bounds[0]
        }
    }

    fn hi(&self) -> f64 {
        if self.unbounded_right {
            f64::INFINITY
        } else {
            self.bounds[1]
        }
    }

    pub fn contains(&self, lambda: f64) -> bool {
        self.lo() <= lambda && lambda <= self.hi()
    }

    fn negated(&self) -> SpectralInterval {
        SpectralInterval {
            bounds: [-self.bounds[1], -self.bounds[0]],
            unbounded_left: self.unbounded_right,
            unbounded_right: self.unbounded_left,
            multiplicity: self.multiplicity,
        }
    }
}

/// An open resolvent gap; `None` ends are infinite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventGap {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub rank: usize,
}

impl ResolventGap {
    /// A point inside the gap: the midpoint, or one unit past a finite end.
    pub fn sample_point(&self) -> f64 {
        match (self.lo, self.hi) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) => a + 1.0,
            (None, Some(b)) => b - 1.0,
            (None, None) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMethod {
    QrBohl,
    ShiftedVerify,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub intervals: Vec<SpectralInterval>,
    pub gaps: Vec<ResolventGap>,
    pub horizon: f64,
    pub window: f64,
    pub method: SpectrumMethod,
    pub domain: Domain,
    pub dim: usize,
    pub warnings: Vec<String>,
    /// Disagreements found by [`cross_verify`].
    pub inconsistencies: Vec<String>,
}

impl SpectrumReport {
    pub fn contains(&self, lambda: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(lambda))
    }

    /// Rank of the gap containing `lambda`, if any.
    pub fn rank_at(&self, lambda: f64) -> Option<usize> {
        self.gaps
            .iter()
            .find(|g| g.lo.is_none_or(|a| lambda > a) && g.hi.is_none_or(|b| lambda < b))
            .map(|g| g.rank)
    }
}

/// Sorts and merges intervals whose distance is below `eps`.
fn merge(mut raw: Vec<SpectralInterval>, eps: f64) -> Vec<SpectralInterval> {
    raw.sort_by(|a, b| a.lo().total_cmp(&b.lo()).then(a.hi().total_cmp(&b.hi())));
    let mut out: Vec<SpectralInterval> = Vec::new();
    for iv in raw {
        match out.last_mut() {
            Some(cur) if iv.lo() - cur.hi() < eps => {
                cur.bounds[0] = cur.bounds[0].min(iv.bounds[0]);
                cur.bounds[1] = cur.bounds[1].max(iv.bounds[1]);
                cur.unbounded_left |= iv.unbounded_left;
                cur.unbounded_right |= iv.unbounded_right;
                cur.multiplicity += iv.multiplicity;
            }
            _ => out.push(iv),
        }
    }
    out
}

/// Gaps between sorted disjoint intervals, ranked by the multiplicity to
/// their left.
fn gaps_of(intervals: &[SpectralInterval], n: usize) -> Vec<ResolventGap> {
    let mut gaps = Vec::new();
    let Some(first) = intervals.first() else {
        return vec![ResolventGap { lo: None, hi: None, rank: n }];
    };
    if !first.unbounded_left {
        gaps.push(ResolventGap { lo: None, hi: Some(first.bounds[0]), rank: 0 });
    }
    let mut rank = 0;
    for (k, iv) in intervals.iter().enumerate() {
        rank += iv.multiplicity;
        if iv.unbounded_right {
            break;
        }
        let hi = intervals.get(k + 1).map(|next| next.bounds[0]);
        gaps.push(ResolventGap { lo: Some(iv.bounds[1]), hi, rank: rank.min(n) });
    }
    gaps
}

/// Name of the system that should be checked for growing coefficients: a
/// kinematic similarity by a known bounded `Q` does not change the spectrum,
/// so a conjugated system is judged by its base.
fn growth_reference(sys: &LinearSystem) -> &LinearSystem {
    match sys.conjugation() {
        Some(c) => growth_reference(&c.base),
        None => sys,
    }
}

/// Spectrum of `sys` on `[0, T]` from Bohl windows of length `L` on the
/// triangularized diagonal.
pub fn halfline_spectrum(sys: &LinearSystem, horizon: f64, window: f64, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidInput(format!("window must be positive, got {window}")));
    }
    if horizon < 2.0 * window {
        return Err(Error::HorizonTooShort { horizon, window });
    }
    let n = sys.dim();
    let mut warnings = Vec::new();
    if let Some((first, last)) = coefficient_growth(growth_reference(sys), 0.0, horizon) {
        if n >= 2 {
            return Err(Error::UnboundedCoefficients { first, last });
        }
        warnings.push(format!(
            "|A(t)| grows from {first:.3} to {last:.3} across the horizon; the Bohl interval reflects the trend, not a bounded spectrum"
        ));
    }
    let grid = propagate::uniform_grid(0.0, horizon, opts.step, None);
    let flow = SampledFlow::new(sys, &grid, 0.0, opts.tol)?;
    let mut report = flow_spectrum(&flow, window, opts)?;
    report.warnings = warnings;
    Ok(report)
}

/// Half-line spectrum of a sampled flow whose first node is the start of
/// the horizon.
pub fn flow_spectrum(flow: &SampledFlow, window: f64, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let n = flow.dim();
    let horizon = flow.grid[flow.len() - 1] - flow.grid[0];
    let tri = triangularize_flow(flow)?;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let pair = bohl_from_cumulative(&tri.grid, &tri.cumulative(i), window, opts)?;
        raw.push(SpectralInterval {
            bounds: [pair.beta_minus, pair.beta_plus],
            unbounded_left: pair.unbounded_below,
            unbounded_right: pair.unbounded_above,
            multiplicity: 1,
        });
    }
    let eps = opts.merge_eps.unwrap_or(2.0 / window);
    let intervals = merge(raw, eps);
    let gaps = gaps_of(&intervals, n);
    Ok(SpectrumReport {
        intervals,
        gaps,
        horizon,
        window,
        method: SpectrumMethod::QrBohl,
        domain: Domain::HalfLinePlus,
        dim: n,
        warnings: Vec::new(),
        inconsistencies: Vec::new(),
    })
}

/// Union of the forward spectrum on `[0, T]` and the mirrored spectrum of
/// the time-reversed system on `[0, T]`. Gap ranks are the forward ones.
pub fn fullline_spectrum(sys: &LinearSystem, horizon: f64, window: f64, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let fwd = halfline_spectrum(sys, horizon, window, opts)?;
    let bwd = halfline_spectrum(&sys.reversed(), horizon, window, opts)?;
    let eps = opts.merge_eps.unwrap_or(2.0 / window);
    let mut raw: Vec<SpectralInterval> = fwd.intervals.clone();
    raw.extend(bwd.intervals.iter().map(|iv| SpectralInterval { multiplicity: 0, ..iv.negated() }));
    let mut intervals = merge(raw, eps);
    let n = sys.dim();
    let mut gaps = gaps_of(&intervals, n);
    for g in &mut gaps {
        g.rank = fwd.rank_at(g.sample_point()).unwrap_or(g.rank);
    }
    for iv in &mut intervals {
        iv.multiplicity = iv.multiplicity.max(1);
    }
    let mut warnings = fwd.warnings;
    warnings.extend(bwd.warnings.into_iter().map(|w| format!("backward: {w}")));
    warnings.push("full-line intervals are the union of the two half-line estimates".into());
    Ok(SpectrumReport {
        intervals,
        gaps,
        horizon,
        window,
        method: SpectrumMethod::QrBohl,
        domain: Domain::FullLine,
        dim: n,
        warnings,
        inconsistencies: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Shifted systems

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    InResolvent,
    InSpectrum,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftedTest {
    pub lambda: f64,
    pub verdict: Verdict,
    /// Rank of the dichotomy projector of `A - lambda I`.
    pub rank: Option<usize>,
    /// Forward log-slopes of the shifted sweep.
    pub rates: Vec<f64>,
    pub k: Option<f64>,
    pub alpha: Option<f64>,
}

/// Flow of `sys` on the midpoint refinement of a uniform grid of `[0, T]`
/// with an even number of coarse steps.
fn shift_base_flow(sys: &LinearSystem, horizon: f64, opts: &SpectrumOptions) -> Result<SampledFlow> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (((horizon / opts.shift_step).ceil() as usize).max(2) + 1) & !1;
    let coarse: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
    SampledFlow::new(sys, &refine(&coarse), 0.0, opts.tol)
}

/// Splits the shifted flow on `[0, T]` and certifies the split on the first
/// half, where the backward sweep from `T` has converged.
fn shifted_on_flow(base: &SampledFlow, lambda: f64, opts: &SpectrumOptions) -> Result<ShiftedTest> {
    let flow = base.shifted(lambda);
    let split = split_flows(Some(&flow), None, &opts.split)?;
    let mut rates = split.stable_rates.clone();
    rates.extend(&split.unstable_rates);
    rates.extend(&split.inconclusive_rates);
    let mut out = ShiftedTest { lambda, verdict: Verdict::InSpectrum, rank: None, rates, k: None, alpha: None };
    if !split.is_conclusive() {
        return Ok(out);
    }
    let n = flow.dim();
    let r = split.stable_basis.ncols();
    let len = flow.len();
    let inverses: Vec<Mat> = flow.steps.iter().map(linalg::inverse).collect::<Result<_>>()?;
    let mut v = vec![Mat::zeros(n, r); len];
    if r > 0 {
        let frame = random_frame(n, opts.split.seed.wrapping_add(7)).columns(0, r).into_owned();
        sweep_frames(&flow, &inverses, len - 1, 0, frame, &mut v);
    }
    let mut w = vec![Mat::zeros(n, n - r); len];
    if r < n {
        let frame = linalg::orthogonal_complement(&v[0]);
        sweep_frames(&flow, &inverses, 0, len - 1, frame, &mut w);
    }
    let half = (len - 1) / 2;
    let half = half - half % 2;
    let cert = certify_bases(&flow.restrict(0, half), &v[..=half], &w[..=half], None, &opts.certify)?;
    out.k = Some(cert.k);
    out.alpha = Some(cert.alpha);
    if cert.is_verified() {
        out.verdict = Verdict::InResolvent;
        out.rank = Some(r);
    } else {
        out.verdict = Verdict::Inconclusive;
    }
    Ok(out)
}

/// Decides whether `lambda` lies in the resolvent of `sys` on `[0, T]` by
/// splitting and certifying `A(t) - lambda I`.
pub fn shifted_dichotomy_test(sys: &LinearSystem, lambda: f64, horizon: f64, opts: &SpectrumOptions) -> Result<ShiftedTest> {
    let base = shift_base_flow(sys, horizon, opts)?;
    shifted_on_flow(&base, lambda, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankProfile {
    pub points: Vec<ShiftedTest>,
    /// Rank inversions between resolvent points, which the theory forbids.
    pub inconsistencies: Vec<String>,
}

impl RankProfile {
    /// `lambda,verdict,rank` lines; the rank is empty off the resolvent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,verdict,rank\n");
        for p in &self.points {
            let verdict = match p.verdict {
                Verdict::InResolvent => "in-resolvent",
                Verdict::InSpectrum => "in-spectrum",
                Verdict::Inconclusive => "inconclusive",
            };
            let rank = p.rank.map(|r| r.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{verdict},{rank}\n", p.lambda));
        }
        s
    }
}

/// Shifted tests along `lambdas`, sharing one flow of `sys`.
pub fn rank_step_function(sys: &LinearSystem, lambdas: &[f64], horizon: f64, opts: &SpectrumOptions) -> Result<RankProfile> {
    if lambdas.is_empty() {
        return Ok(RankProfile { points: Vec::new(), inconsistencies: Vec::new() });
    }
    let base = shift_base_flow(sys, horizon, opts)?;
    let points = lambdas.iter().map(|&l| shifted_on_flow(&base, l, opts)).collect::<Result<Vec<_>>>()?;
    let mut ranked: Vec<(f64, usize)> = points.iter().filter_map(|p| p.rank.map(|r| (p.lambda, r))).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let inconsistencies = ranked
        .windows(2)
        .filter(|w| w[1].1 < w[0].1)
        .map(|w| format!("rank drops from {} at lambda = {} to {} at lambda = {}", w[0].1, w[0].0, w[1].1, w[1].0))
        .collect();
    Ok(RankProfile { points, inconsistencies })
}

/// Checks every gap of a half-line report with a shifted test at its
/// sample point. The report's method becomes `shifted-verify` and any
/// disagreement is recorded.
pub fn cross_verify(sys: &LinearSystem, report: &SpectrumReport, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let lambdas: Vec<f64> = report.gaps.iter().map(ResolventGap::sample_point).collect();
    let profile = rank_step_function(sys, &lambdas, report.horizon, opts)?;
    let mut out = report.clone();
    out.method = SpectrumMethod::ShiftedVerify;
    out.inconsistencies.extend(profile.inconsistencies);
    for (gap, test) in report.gaps.iter().zip(&profile.points) {
        if test.rank != Some(gap.rank) {
            out.inconsistencies.push(format!(
                "gap ({:?}, {:?}) has rank {} but the shifted test at {} gives {:?} with rank {:?}",
                gap.lo, gap.hi, gap.rank, test.lambda, test.verdict, test.rank
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin, markus_yamabe};

    fn lin(name: &str) -> LinearSystem {
        builtin(name).unwrap().linear().clone()
    }

    #[test]
    fn triangular_system_stays_put() {
        let sys = LinearSystem::constant("t", Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, -1.0]));
        let grid = propagate::uniform_grid(0.0, 2.0, 0.1, None);
        let tri = perron_triangularize(&sys, &grid, 1e-12).unwrap();
        for row in &tri.b_diag {
            assert!((row[0] - 1.0).abs() < 1e-8 && (row[1] + 1.0).abs() < 1e-8);
        }
        assert!(tri.q_samples.iter().all(|q| (q - Mat::identity(2, 2)).norm() < 1e-8));
        let m = sys.sampled_sup_norm(0.0, 2.0, 10);
        assert!(tri.offdiag_bound <= 3.0 * m * (1.0 + 1e-10));
    }

    #[test]
    fn constant_and_periodic_bohl() {
        let opts = SpectrumOptions::default();
        let p = scalar_bohl(&|_| 0.7, 20.0, 4.0, &opts).unwrap();
        assert!((p.beta_minus - 0.7).abs() < 1e-12 && (p.beta_plus - 0.7).abs() < 1e-12);
        let l = 2.0 * std::f64::consts::PI;
        let p = scalar_bohl(&|t: f64| 0.3 + t.cos(), 8.0 * l, l, &opts).unwrap();
        assert!((p.beta_minus - 0.3).abs() < 1e-8 && (p.beta_plus - 0.3).abs() < 1e-8, "{p:?}");
        assert!(matches!(scalar_bohl(&|_| 0.0, 5.0, 3.0, &opts), Err(Error::HorizonTooShort { .. })));
        let p = scalar_bohl(&|t| t, 40.0, 8.0, &opts).unwrap();
        assert!(p.unbounded_above && !p.unbounded_below);
    }

    #[test]
    fn merging_and_ranks() {
        let iv = |a: f64, b: f64| SpectralInterval { bounds: [a, b], unbounded_left: false, unbounded_right: false, multiplicity: 1 };
        let merged = merge(vec![iv(1.0, 1.0), iv(-1.0, -1.0), iv(1.05, 1.1)], 0.25);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[1].multiplicity, 2);
        let gaps = gaps_of(&merged, 3);
        let ranks: Vec<usize> = gaps.iter().map(|g| g.rank).collect();
        assert_eq!(ranks, vec![0, 1, 3]);
        assert_eq!(gaps[0].lo, None);
        assert_eq!(gaps[2].hi, None);
    }

    #[test]
    fn diagonal_spectrum() {
        let r = halfline_spectrum(&lin("auto_diag_113"), 40.0, 8.0, &SpectrumOptions::default()).unwrap();
        assert_eq!(r.intervals.len(), 2);
        assert!((r.intervals[0].bounds[0] + 1.0).abs() < 0.05 && (r.intervals[1].bounds[1] - 1.0).abs() < 0.05);
        assert_eq!(r.gaps.iter().map(|g| g.rank).collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn markus_spectrum_and_shifts() {
        let opts = SpectrumOptions::default();
        let r = halfline_spectrum(&markus_yamabe(), 40.0, 8.0, &opts).unwrap();
        assert_eq!(r.intervals.len(), 2, "{r:?}");
        assert!((r.intervals[0].bounds[0] + 1.0).abs() < 0.05 && (r.intervals[1].bounds[0] - 0.5).abs() < 0.05);
        let t = shifted_dichotomy_test(&markus_yamabe(), 0.0, 40.0, &opts).unwrap();
        assert_eq!((t.verdict, t.rank), (Verdict::InResolvent, Some(1)), "{t:?}");
    }

    #[test]
    fn shifted_diagonal() {
        let sys = lin("auto_diag_113");
        let opts = SpectrumOptions::default();
        let prof = rank_step_function(&sys, &[-2.0, 0.0, 1.0, 2.0], 40.0, &opts).unwrap();
        let got: Vec<(Verdict, Option<usize>)> = prof.points.iter().map(|p| (p.verdict, p.rank)).collect();
        assert_eq!(
            got,
            vec![
                (Verdict::InResolvent, Some(0)),
                (Verdict::InResolvent, Some(1)),
                (Verdict::InSpectrum, None),
                (Verdict::InResolvent, Some(3))
            ]
        );
        assert!(prof.inconsistencies.is_empty());
        assert!(rank_step_function(&sys, &[], 40.0, &opts).unwrap().points.is_empty());
        assert!(prof.to_csv().starts_with("lambda,verdict,rank\n-2,in-resolvent,0\n"));
    }

    #[test]
    fn growing_coefficients() {
        let opts = SpectrumOptions::default();
        let r = halfline_spectrum(&lin("scalar_linear_t"), 40.0, 8.0, &opts).unwrap();
        assert!(r.intervals[0].unbounded_right && !r.warnings.is_empty());
        let grow = LinearSystem::new("g", 2, Domain::FullLine, |t| Mat::from_row_slice(2, 2, &[0.0, t, 0.0, -1.0]));
        assert!(matches!(halfline_spectrum(&grow, 40.0, 8.0, &opts), Err(Error::UnboundedCoefficients { .. })));
    }
}
