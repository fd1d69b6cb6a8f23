//! Exponential dichotomies on finite windows.
//!
//! A dichotomy with projector `P` and constants `(K, alpha)` asks that
//!
//! ```text
//! |X(t) P X^-1(s)|       <= K e^{-alpha (t - s)}   for t >= s,
//! |X(t) (I - P) X^-1(s)| <= K e^{-alpha (s - t)}   for t <= s.
//! ```
//!
//! On a finite window every `alpha` is admissible with a large enough `K`,
//! so a certificate needs a rule for the rate. The rule used here: `alpha`
//! is admissible when the constant it needs over the whole window is no
//! larger (up to a small log tolerance) than the constant it needs over
//! separations of at most half the window. A rate that is too fast shows up
//! as a constant growing with the window, a genuine one does not.
//!
//! Pair norms never form `X(t)` itself. The image and kernel of `P` are
//! carried along the grid with orthonormal bases, and each norm is a
//! product of small coefficient matrices; see
//! [`propagate::track_subspace`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, ProjectionMatrix, Vector};
use crate::ode::{self, OdeOptions};
use crate::propagate::{self, matrix_rhs, track_subspace, SampledFlow};
use crate::system::{Domain, LinearSystem};

/// Default spacing of certification and Green grids.
pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateFlag {
    Verified,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    /// Largest acceptable `K`.
    pub k_cap: f64,
    /// Largest acceptable relative violation on the refined grid.
    pub residual_tol: f64,
    /// Rates below this do not count as a dichotomy.
    pub alpha_min: f64,
    /// Log tolerance of the window-independence test for `alpha`.
    pub plateau_tol: f64,
    /// Test only these rates instead of searching `(0, M]`.
    pub alpha_candidates: Option<Vec<f64>>,
    /// Integration tolerance for the step transitions.
    pub tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { k_cap: 1e6, residual_tol: 1e-2, alpha_min: 0.05, plateau_tol: 1e-3, alpha_candidates: None, tol: 1e-10 }
    }
}

/// Constants `(K, alpha)` of a dichotomy observed on a finite grid.
#[derive(Debug, Clone)]
pub struct DichotomyCertificate {
    /// Projector at the anchor time.
    pub projector: ProjectionMatrix,
    pub anchor: f64,
    pub k: f64,
    pub alpha: f64,
    /// Largest rate passing the window-independence test; `alpha` is 99% of it.
    pub alpha_max: f64,
    /// Bound on `|A|` used as the upper end of the rate search.
    pub m_bound: f64,
    pub interval: (f64, f64),
    /// Which line the window approximates.
    pub domain: Domain,
    pub grid: Vec<f64>,
    /// Worst relative violation over pairs of the refined grid.
    pub residual: f64,
    pub flag: CertificateFlag,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectorReport {
    pub entries: Vec<Vec<f64>>,
    pub rank: usize,
}

/// JSON shape of a [`DichotomyCertificate`].
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha: f64,
    pub alpha_max: f64,
    pub projector: ProjectorReport,
    pub anchor: f64,
    pub interval: [f64; 2],
    pub domain: Domain,
    pub grid_points: usize,
    pub m_bound: f64,
    pub residual: f64,
    pub flag: CertificateFlag,
}

impl DichotomyCertificate {
    pub fn is_verified(&self) -> bool {
        self.flag == CertificateFlag::Verified
    }

    pub fn horizon(&self) -> f64 {
        self.interval.1 - self.interval.0
    }

    /// `K e^{-alpha |t - s|}`.
    pub fn bound(&self, t: f64, s: f64) -> f64 {
        self.k * (-self.alpha * (t - s).abs()).exp()
    }

    pub fn report(&self) -> CertificateReport {
        CertificateReport {
            k: self.k,
            alpha: self.alpha,
            alpha_max: self.alpha_max,
            projector: ProjectorReport { entries: linalg::rows(&self.projector.matrix), rank: self.projector.rank },
            anchor: self.anchor,
            interval: [self.interval.0, self.interval.1],
            domain: self.domain,
            grid_points: self.grid.len(),
            m_bound: self.m_bound,
            residual: self.residual,
            flag: self.flag,
        }
    }
}

/// The line approximated by a window `[a, b]`.
pub fn window_domain(a: f64, b: f64) -> Domain {
    if a >= 0.0 {
        Domain::HalfLinePlus
    } else if b <= 0.0 {
        Domain::HalfLineMinus
    } else {
        Domain::FullLine
    }
}

fn domain_bounds(d: Domain) -> (f64, f64) {
    match d {
        Domain::FullLine => (f64::NEG_INFINITY, f64::INFINITY),
        Domain::HalfLinePlus => (0.0, f64::INFINITY),
        Domain::HalfLineMinus => (f64::NEG_INFINITY, 0.0),
    }
}

fn check_grid(grid: &[f64], a: f64, b: f64) -> Result<()> {
    if !(a < b) {
        return Err(Error::InvalidInput(format!("interval [{a}, {b}] is empty")));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("grid must be strictly increasing with at least two points".into()));
    }
    let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
    if grid[0] < a - slack || grid[grid.len() - 1] > b + slack {
        return Err(Error::InvalidInput(format!("grid leaves the interval [{a}, {b}]")));
    }
    Ok(())
}

/// Inserts `x` into a sorted grid unless a node already sits within `1e-12`.
fn with_node(grid: &[f64], x: f64) -> Vec<f64> {
    let mut g = grid.to_vec();
    if !g.iter().any(|v| (v - x).abs() <= 1e-12 * (1.0 + x.abs())) {
        g.push(x);
        g.sort_by(f64::total_cmp);
    }
    g
}

/// Grid plus all midpoints; the original nodes are the even ones.
pub(crate) fn refine(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len() - 1);
    for w in grid.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(grid[grid.len() - 1]);
    out
}

/// Uniform pieces of spacing at most `h` between consecutive breakpoints.
fn piecewise_grid(points: &[f64], h: f64) -> Vec<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let piece = propagate::uniform_grid(w[0], w[1], h, None);
        out.extend_from_slice(&piece[1..]);
    }
    out
}

/// `P(t_k) = X(t_k, t_anchor) P X(t_anchor, t_k)` at every node of the flow,
/// from tracked bases of the image and kernel of `P`.
///
/// Tracking carries roundoff in the image of `P` forward at the rate gap of
/// the dichotomy, so on long windows prefer [`contracting_projectors`].
pub fn propagated_projectors(flow: &SampledFlow, p: &ProjectionMatrix) -> Result<Vec<Mat>> {
    let (v, w) = tracked_bases(flow, p)?;
    projectors_from(&v, &w)
}

pub(crate) fn projectors_from(v: &[Mat], w: &[Mat]) -> Result<Vec<Mat>> {
    v.iter()
        .zip(w)
        .map(|(vk, wk)| {
            let n = vk.nrows();
            match (vk.ncols(), wk.ncols()) {
                (0, _) => Ok(Mat::zeros(n, n)),
                (_, 0) => Ok(Mat::identity(n, n)),
                _ => linalg::oblique_projection(vk, wk).map(|q| q.matrix),
            }
        })
        .collect()
}

pub(crate) fn image_and_kernel(p: &ProjectionMatrix) -> (Mat, Mat) {
    let n = p.dim();
    let image = linalg::column_space(&p.matrix, p.rank);
    let kernel = linalg::column_space(&(Mat::identity(n, n) - &p.matrix), n - p.rank);
    (image, kernel)
}

pub(crate) fn tracked_bases(flow: &SampledFlow, p: &ProjectionMatrix) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let (image, kernel) = image_and_kernel(p);
    Ok((track_subspace(flow, &image)?.bases, track_subspace(flow, &kernel)?.bases))
}

/// Orthonormal frames of `span(frame)` carried from node `from` to node
/// `to`, one per visited node (indexed by node).
pub(crate) fn sweep_frames(flow: &SampledFlow, inverses: &[Mat], from: usize, to: usize, frame: Mat, out: &mut [Mat]) {
    let mut q = frame;
    out[from] = q.clone();
    if to > from {
        for k in from..to {
            q = qr_positive(&flow.steps[k] * &q).0;
            out[k + 1] = q.clone();
        }
    } else {
        for k in (to..from).rev() {
            q = qr_positive(&inverses[k] * &q).0;
            out[k] = q.clone();
        }
    }
}

/// Bases of `P(t_k)`'s image and kernel, each computed only in the
/// direction in which it is attracting.
///
/// The image is carried backward from the anchor, the kernel forward. On
/// the far side of the anchor the image is the dominant subspace of a
/// backward sweep started at the last node, and the kernel that of a
/// forward sweep started at the first node; both forget their random
/// start at the rate of the dichotomy gap, so values within a few
/// `1 / alpha` of the ends are unreliable.
pub fn contracting_bases(flow: &SampledFlow, p: &ProjectionMatrix, seed: u64) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let n = flow.dim();
    let len = flow.len();
    let r = p.rank;
    let anchor = flow.anchor;
    let inverses: Vec<Mat> = flow.steps.iter().map(linalg::inverse).collect::<Result<_>>()?;
    let (image, kernel) = image_and_kernel(p);
    let mut v = vec![Mat::zeros(n, r); len];
    let mut w = vec![Mat::zeros(n, n - r); len];
    if r > 0 {
        sweep_frames(flow, &inverses, anchor, 0, image, &mut v);
        if anchor + 1 < len {
            let frame = random_frame(n, seed).columns(0, r).into_owned();
            let mut tail = vec![Mat::zeros(n, r); len];
            sweep_frames(flow, &inverses, len - 1, anchor + 1, frame, &mut tail);
            v[anchor + 1..].clone_from_slice(&tail[anchor + 1..]);
        }
    }
    if r < n {
        sweep_frames(flow, &inverses, anchor, len - 1, kernel, &mut w);
        if anchor > 0 {
            let frame = random_frame(n, seed.wrapping_add(1)).columns(0, n - r).into_owned();
            let mut head = vec![Mat::zeros(n, n - r); len];
            sweep_frames(flow, &inverses, 0, anchor - 1, frame, &mut head);
            w[..anchor].clone_from_slice(&head[..anchor]);
        }
    }
    Ok((v, w))
}

/// Projectors from [`contracting_bases`].
pub fn contracting_projectors(flow: &SampledFlow, p: &ProjectionMatrix, seed: u64) -> Result<Vec<Mat>> {
    let (v, w) = contracting_bases(flow, p, seed)?;
    projectors_from(&v, &w)
}

/// `(separation, ln norm)` of the two dichotomy inequalities over all pairs
/// of a flow's nodes, split into pairs of even nodes and all pairs.
struct PairLogs {
    coarse: Vec<(f64, f64)>,
    all: Vec<(f64, f64)>,
}

/// With orthonormal bases `V_k`, `W_k` of `P(t_k)`'s image and kernel,
/// `X(t_i, t_j) P(t_j) = V_i C_{i-1} ... C_j E_j` where
/// `C_k = V_{k+1}^T X(t_{k+1}, t_k) V_k` and `E_j` holds the first rows of
/// `[V_j W_j]^{-1}`; the kernel side is analogous with inverse coefficients.
fn pair_logs(flow: &SampledFlow, vb: &[Mat], wb: &[Mat]) -> Result<PairLogs> {
    let n = flow.dim();
    let r = vb[0].ncols();
    let len = flow.len();
    let mut e = Vec::with_capacity(len);
    let mut f = Vec::with_capacity(len);
    for k in 0..len {
        let mut basis = Mat::zeros(n, n);
        basis.columns_mut(0, r).copy_from(&vb[k]);
        basis.columns_mut(r, n - r).copy_from(&wb[k]);
        let inv = linalg::inverse(&basis)?;
        e.push(inv.rows(0, r).into_owned());
        f.push(inv.rows(r, n - r).into_owned());
    }
    let c: Vec<Mat> = (0..len - 1).map(|k| vb[k + 1].transpose() * &flow.steps[k] * &vb[k]).collect();
    let d_inv: Vec<Mat> = if r < n {
        (0..len - 1).map(|k| linalg::inverse(&(wb[k + 1].transpose() * &flow.steps[k] * &wb[k]))).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut out = PairLogs { coarse: Vec::new(), all: Vec::new() };
    let mut push = |i: usize, j: usize, d: f64, v: f64| -> Result<()> {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Blowup { t: flow.grid[i.max(j)] });
        }
        let l = v.ln();
        out.all.push((d, l));
        if i % 2 == 0 && j % 2 == 0 {
            out.coarse.push((d, l));
        }
        Ok(())
    };
    if r > 0 {
        for j in 0..len {
            let mut prod = e[j].clone();
            for i in j..len {
                if i > j {
                    prod = &c[i - 1] * prod;
                }
                push(i, j, flow.grid[i] - flow.grid[j], linalg::norm2(&prod))?;
            }
        }
    }
    if r < n {
        for j in 0..len {
            let mut prod = f[j].clone();
            for i in (0..=j).rev() {
                if i < j {
                    prod = &d_inv[i] * prod;
                }
                push(i, j, flow.grid[j] - flow.grid[i], linalg::norm2(&prod))?;
            }
        }
    }
    Ok(out)
}

/// Keeps the largest log per separation; pairs on a uniform grid share
/// separations, and only the largest matters for every envelope.
fn separation_maxima(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        match out.last_mut() {
            Some(q) if p.0 - q.0 <= 1e-9 * p.0.abs().max(1.0) => {
                if p.1 > q.1 {
                    *q = (q.0.max(p.0), p.1);
                } else {
                    q.0 = q.0.max(p.0);
                }
            }
            _ => out.push(p),
        }
    }
    out
}

/// `max (ln norm + alpha d)` over pairs with separation at most `d_lim`.
fn log_envelope(pts: &[(f64, f64)], alpha: f64, d_lim: f64) -> f64 {
    pts.iter().filter(|p| p.0 <= d_lim).map(|p| p.1 + alpha * p.0).fold(f64::NEG_INFINITY, f64::max)
}

fn window_independent(pts: &[(f64, f64)], d_max: f64, alpha: f64, tol: f64) -> bool {
    log_envelope(pts, alpha, f64::INFINITY) <= log_envelope(pts, alpha, 0.5 * d_max * (1.0 + 1e-12)) + tol
}

/// Largest `alpha` in `(0, m]` such that every smaller rate is window
/// independent: a scan of 400 points followed by bisection.
fn alpha_plateau(pts: &[(f64, f64)], d_max: f64, m: f64, tol: f64) -> f64 {
    if !(m > 0.0) {
        return 0.0;
    }
    const SCAN: usize = 400;
    let mut lo = 0.0;
    for i in 1..=SCAN {
        let a = m * i as f64 / SCAN as f64;
        if window_independent(pts, d_max, a, tol) {
            lo = a;
            continue;
        }
        let mut hi = a;
        if lo == 0.0 && !window_independent(pts, d_max, 0.0, tol) {
            return 0.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if window_independent(pts, d_max, mid, tol) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return lo;
    }
    m
}

/// Rate bound from the step transitions:
/// `max_k max(ln|M_k|, ln|M_k^-1|) / h_k`.
pub fn step_rate_bound(flow: &SampledFlow) -> Result<f64> {
    let mut m = 0.0f64;
    for (s, w) in flow.steps.iter().zip(flow.grid.windows(2)) {
        let h = w[1] - w[0];
        let fwd = linalg::norm2(s).ln();
        let bwd = linalg::norm2(&linalg::inverse(s)?).ln();
        m = m.max(fwd.max(bwd) / h);
    }
    Ok(m)
}

/// Certifies a dichotomy for `sys` with projector `p` (at time 0, or at the
/// interval end nearest to 0) on `interval`, sampling pairs of `grid`.
///
/// The constants are fitted on `grid`; the residual is measured on the grid
/// refined by its midpoints.
pub fn certify(
    sys: &LinearSystem,
    p: &ProjectionMatrix,
    interval: (f64, f64),
    grid: &[f64],
    opts: &CertifyOptions,
) -> Result<DichotomyCertificate> {
    let (a, b) = interval;
    check_grid(grid, a, b)?;
    if p.dim() != sys.dim() {
        return Err(Error::Shape(format!("projector is {0}x{0}, system dimension is {1}", p.dim(), sys.dim())));
    }
    let anchor = 0.0f64.clamp(grid[0], grid[grid.len() - 1]);
    let coarse = with_node(grid, anchor);
    let fine = refine(&coarse);
    let flow = SampledFlow::new(sys, &fine, anchor, opts.tol)?;
    let samples = ((b - a) * 20.0) as usize + 101;
    let m = sys.sampled_sup_norm(a, b, samples);
    let mut cert = certify_flow(&flow, p, Some(m), opts)?;
    cert.interval = interval;
    cert.domain = window_domain(a, b);
    Ok(cert)
}

/// Certifies on a precomputed flow whose even nodes form the fitting grid
/// and whose odd nodes are the refinement. The projector is taken at the
/// flow's anchor node. Without `m_bound` the rate search is capped by
/// [`step_rate_bound`].
pub fn certify_flow(
    flow: &SampledFlow,
    p: &ProjectionMatrix,
    m_bound: Option<f64>,
    opts: &CertifyOptions,
) -> Result<DichotomyCertificate> {
    let n = flow.dim();
    if p.dim() != n {
        return Err(Error::Shape(format!("projector is {0}x{0}, flow dimension is {n}", p.dim())));
    }
    let idem = linalg::norm2(&(&p.matrix * &p.matrix - &p.matrix));
    if idem > 1e-8 * linalg::norm2(&p.matrix).max(1.0) {
        return Err(Error::InvalidInput(format!("projector is not idempotent (|P^2 - P| = {idem:e})")));
    }
    let (vb, wb) = tracked_bases(flow, p)?;
    let mut cert = certify_bases(flow, &vb, &wb, m_bound, opts)?;
    cert.projector = p.clone();
    Ok(cert)
}

/// Certificate from given bases of the projector's image and kernel at
/// every node of `flow` (even nodes fit, odd nodes refine).
pub fn certify_bases(
    flow: &SampledFlow,
    vb: &[Mat],
    wb: &[Mat],
    m_bound: Option<f64>,
    opts: &CertifyOptions,
) -> Result<DichotomyCertificate> {
    let n = flow.dim();
    if vb.len() != flow.len() || wb.len() != flow.len() || vb[0].ncols() + wb[0].ncols() != n {
        return Err(Error::Shape("bases must give one image and kernel basis per node".into()));
    }
    let m = match m_bound {
        Some(m) => m,
        None => step_rate_bound(flow)?,
    };
    let a = flow.grid[0];
    let b = flow.grid[flow.len() - 1];
    let grid: Vec<f64> = flow.grid.iter().step_by(2).copied().collect();
    let anchor_p = projectors_from(&vb[flow.anchor..=flow.anchor], &wb[flow.anchor..=flow.anchor])?.remove(0);
    let rank = vb[0].ncols();
    let mut cert = DichotomyCertificate {
        projector: ProjectionMatrix { idempotency_residual: linalg::norm2(&(&anchor_p * &anchor_p - &anchor_p)), matrix: anchor_p, rank },
        anchor: flow.anchor_time(),
        k: f64::INFINITY,
        alpha: 0.0,
        alpha_max: 0.0,
        m_bound: m,
        interval: (a, b),
        domain: window_domain(a, b),
        grid,
        residual: f64::INFINITY,
        flag: CertificateFlag::Violated,
    };
    let logs = match pair_logs(flow, vb, wb) {
        Ok(l) => l,
        // the image and kernel merged somewhere on the grid
        Err(Error::SingularMatrix { .. }) => return Ok(cert),
        Err(e) => return Err(e),
    };
    let logs = PairLogs { coarse: separation_maxima(logs.coarse), all: logs.all };
    let d_max = logs.coarse.iter().map(|p| p.0).fold(0.0, f64::max);
    let (alpha_max, alpha) = match &opts.alpha_candidates {
        None => {
            let am = alpha_plateau(&logs.coarse, d_max, m * (1.0 + 1e-9), opts.plateau_tol);
            (am, 0.99 * am)
        }
        Some(cands) => {
            let best = cands
                .iter()
                .copied()
                .filter(|&c| c > 0.0 && c.is_finite())
                .filter(|&c| log_envelope(&logs.coarse, c, f64::INFINITY).exp() <= opts.k_cap)
                .filter(|&c| window_independent(&logs.coarse, d_max, c, opts.plateau_tol))
                .fold(0.0, f64::max);
            (best, best)
        }
    };
    let k = log_envelope(&logs.coarse, alpha, f64::INFINITY).exp().max(1.0);
    let ln_k = k.ln();
    let excess = logs.all.iter().map(|p| p.1 + alpha * p.0 - ln_k).fold(f64::NEG_INFINITY, f64::max);
    cert.alpha_max = alpha_max;
    cert.alpha = alpha;
    cert.k = k;
    cert.residual = excess.exp_m1().max(0.0);
    cert.flag = if !(alpha >= opts.alpha_min) || !(k <= opts.k_cap) {
        CertificateFlag::Violated
    } else if cert.residual > opts.residual_tol {
        CertificateFlag::Inconclusive
    } else {
        CertificateFlag::Verified
    };
    Ok(cert)
}

/// `|P(t)|` along a window and the least-squares slope of its logarithm.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectorGrowth {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    /// `slope` below the growth threshold.
    pub bounded: bool,
}

/// Checks whether `t -> |X(t) P X^-1(t)|` stays bounded on `[a, b]`: the
/// log-norm slope must stay below `threshold` (0.05 by default in callers).
pub fn projector_growth(
    sys: &LinearSystem,
    p: &ProjectionMatrix,
    a: f64,
    b: f64,
    h: f64,
    threshold: f64,
    tol: f64,
) -> Result<ProjectorGrowth> {
    let anchor = 0.0f64.clamp(a, b);
    let grid = propagate::uniform_grid(a, b, h, Some(anchor));
    let flow = SampledFlow::new(sys, &grid, anchor, tol)?;
    let norms: Vec<f64> = match propagated_projectors(&flow, p) {
        Ok(ps) => ps.iter().map(linalg::norm2).collect(),
        Err(Error::SingularMatrix { .. }) => {
            return Ok(ProjectorGrowth { times: grid, norms: Vec::new(), slope: f64::INFINITY, bounded: false })
        }
        Err(e) => return Err(e),
    };
    let logs: Vec<f64> = norms.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = ls_slope(&grid, &logs).abs();
    Ok(ProjectorGrowth { times: grid, norms, slope, bounded: slope < threshold })
}

pub(crate) fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Subspace splitting

#[derive(Debug, Clone)]
pub struct SplitOptions {
    /// Log-slopes within `threshold` of zero are inconclusive.
    pub threshold: f64,
    /// Seed of the random initial frame.
    pub seed: u64,
    /// Largest step of the sampled flow.
    pub step: f64,
    pub tol: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { threshold: 0.05, seed: 0, step: 0.1, tol: 1e-10 }
    }
}

/// Estimates of the forward-bounded subspace `V` and the backward-bounded
/// subspace `W` at time 0.
#[derive(Debug, Clone, Serialize)]
pub struct SubspaceSplit {
    #[serde(with = "crate::linalg::mat_rows")]
    pub stable_basis: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub unstable_basis: Mat,
    pub horizon: f64,
    pub domain: Domain,
    /// Forward log-slopes of the stable directions (negative).
    pub stable_rates: Vec<f64>,
    /// Forward log-slopes of the unstable directions (positive).
    pub unstable_rates: Vec<f64>,
    /// Slopes that could not be classified.
    pub inconclusive_rates: Vec<f64>,
}

impl SubspaceSplit {
    pub fn dim(&self) -> usize {
        self.stable_basis.nrows()
    }

    pub fn is_conclusive(&self) -> bool {
        self.inconclusive_rates.is_empty()
    }

    /// Condition number of `[V W]`; infinite when the dimensions do not add up.
    pub fn condition(&self) -> f64 {
        let n = self.dim();
        if self.stable_basis.ncols() + self.unstable_basis.ncols() != n {
            return f64::INFINITY;
        }
        let mut basis = Mat::zeros(n, n);
        basis.columns_mut(0, self.stable_basis.ncols()).copy_from(&self.stable_basis);
        basis.columns_mut(self.stable_basis.ncols(), self.unstable_basis.ncols()).copy_from(&self.unstable_basis);
        linalg::condition_number(&basis)
    }

    /// `V` and `W` together span the space.
    pub fn complementary(&self) -> bool {
        self.condition() < 1e8
    }

    /// Projector with image `V` and kernel `W`.
    pub fn projector(&self) -> Result<ProjectionMatrix> {
        linalg::oblique_projection(&self.stable_basis, &self.unstable_basis)
    }
}

pub(crate) fn random_frame(n: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

/// QR factorization with a nonnegative diagonal; returns `Q` and `ln |r_kk|`.
pub(crate) fn qr_positive(z: Mat) -> (Mat, Vec<f64>) {
    let qr = z.qr();
    let (mut q, r) = qr.unpack();
    let mut logs = Vec::with_capacity(r.ncols());
    for j in 0..r.ncols() {
        let d = r[(j, j)];
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
        logs.push(d.abs().ln());
    }
    (q, logs)
}

/// Carries `frame` from node `from` to node `to` by step transitions,
/// re-orthonormalizing after every step. Returns the final frame and the
/// accumulated log-diagonal.
fn qr_sweep(flow: &SampledFlow, inverses: &[Mat], from: usize, to: usize, frame: &Mat) -> (Mat, Vec<f64>) {
    let mut q = frame.clone();
    let mut acc = vec![0.0; frame.ncols()];
    let mut apply = |m: &Mat, q: &mut Mat| {
        let (nq, logs) = qr_positive(m * &*q);
        *q = nq;
        acc.iter_mut().zip(logs).for_each(|(a, l)| *a += l);
    };
    if to >= from {
        for k in from..to {
            apply(&flow.steps[k], &mut q);
        }
    } else {
        for k in (to..from).rev() {
            apply(&inverses[k], &mut q);
        }
    }
    (q, acc)
}

/// Classified directions of one half-line sweep.
struct SideSplit {
    /// Orthonormal frame at time 0, leading columns first.
    frame: Mat,
    /// Forward log-slope per column.
    rates: Vec<f64>,
}

/// Backward sweep over `[0, T]`: the leading columns of the frame at 0
/// converge to the most contracting forward directions. The first half of
/// the sweep aligns the frame; rates are read off the second half.
fn plus_side(flow: &SampledFlow, seed: u64) -> Result<SideSplit> {
    let inverses: Vec<Mat> = flow.steps.iter().map(linalg::inverse).collect::<Result<_>>()?;
    let last = flow.len() - 1;
    let half = propagate::nearest(&flow.grid, 0.5 * (flow.grid[0] + flow.grid[last]));
    let frame = random_frame(flow.dim(), seed);
    let (aligned, _) = qr_sweep(flow, &inverses, last, half, &frame);
    let (q, logs) = qr_sweep(flow, &inverses, half, 0, &aligned);
    let span = flow.grid[half] - flow.grid[0];
    let rates = logs.iter().map(|l| -l / span).collect();
    Ok(SideSplit { frame: q, rates })
}

/// Forward sweep over `[-T, 0]`: the leading columns converge to the
/// directions that grow fastest towards 0, i.e. decay fastest backward.
fn minus_side(flow: &SampledFlow, seed: u64) -> Result<SideSplit> {
    let last = flow.len() - 1;
    let half = propagate::nearest(&flow.grid, 0.5 * (flow.grid[0] + flow.grid[last]));
    let frame = random_frame(flow.dim(), seed);
    let (aligned, _) = qr_sweep(flow, &[], 0, half, &frame);
    let (q, logs) = qr_sweep(flow, &[], half, last, &aligned);
    let span = flow.grid[last] - flow.grid[half];
    let rates = logs.iter().map(|l| l / span).collect();
    Ok(SideSplit { frame: q, rates })
}

fn columns(m: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Length of the leading run of `rates` satisfying `pred`, then the
/// indices of the rest sorted into (`other`, `neutral`).
fn classify(rates: &[f64], lead: impl Fn(f64) -> bool, other: impl Fn(f64) -> bool) -> (usize, Vec<usize>, Vec<usize>) {
    let m = rates.iter().take_while(|r| lead(**r)).count();
    let mut rest = Vec::new();
    let mut neutral = Vec::new();
    for (k, &r) in rates.iter().enumerate().skip(m) {
        if other(r) {
            rest.push(k);
        } else {
            neutral.push(k);
        }
    }
    (m, rest, neutral)
}

/// Splitting from precomputed flows: `plus` on `[0, T]` (first node 0) and
/// `minus` on `[-T, 0]` (last node 0). With both, `V` comes from `plus` and
/// `W` from `minus`; with one, the other subspace is the span of the
/// remaining classified directions.
pub fn split_flows(plus: Option<&SampledFlow>, minus: Option<&SampledFlow>, opts: &SplitOptions) -> Result<SubspaceSplit> {
    let thr = opts.threshold;
    let stable = |r: f64| r < -thr;
    let unstable = |r: f64| r > thr;
    let pick = |side: &SideSplit, idx: &[usize]| {
        (columns(&side.frame, idx), idx.iter().map(|&k| side.rates[k]).collect::<Vec<f64>>())
    };
    match (plus, minus) {
        (Some(pf), Some(mf)) => {
            let ps = plus_side(pf, opts.seed)?;
            let ms = minus_side(mf, opts.seed.wrapping_add(1))?;
            let (mv, _, pneutral) = classify(&ps.rates, stable, unstable);
            let (mw, _, mneutral) = classify(&ms.rates, unstable, stable);
            let (stable_basis, stable_rates) = pick(&ps, &(0..mv).collect::<Vec<_>>());
            let (unstable_basis, unstable_rates) = pick(&ms, &(0..mw).collect::<Vec<_>>());
            let mut inconclusive_rates: Vec<f64> = pneutral.iter().map(|&k| ps.rates[k]).collect();
            inconclusive_rates.extend(mneutral.iter().map(|&k| ms.rates[k]));
            let horizon = (pf.grid[pf.len() - 1] - pf.grid[0]).min(mf.grid[mf.len() - 1] - mf.grid[0]);
            Ok(SubspaceSplit {
                stable_basis,
                unstable_basis,
                horizon,
                domain: Domain::FullLine,
                stable_rates,
                unstable_rates,
                inconclusive_rates,
            })
        }
        (Some(pf), None) => {
            let ps = plus_side(pf, opts.seed)?;
            let (mv, rest, neutral) = classify(&ps.rates, stable, unstable);
            let (stable_basis, stable_rates) = pick(&ps, &(0..mv).collect::<Vec<_>>());
            let (unstable_basis, unstable_rates) = pick(&ps, &rest);
            Ok(SubspaceSplit {
                stable_basis,
                unstable_basis,
                horizon: pf.grid[pf.len() - 1] - pf.grid[0],
                domain: Domain::HalfLinePlus,
                stable_rates,
                unstable_rates,
                inconclusive_rates: neutral.iter().map(|&k| ps.rates[k]).collect(),
            })
        }
        (None, Some(mf)) => {
            let ms = minus_side(mf, opts.seed.wrapping_add(1))?;
            let (mw, rest, neutral) = classify(&ms.rates, unstable, stable);
            let (unstable_basis, unstable_rates) = pick(&ms, &(0..mw).collect::<Vec<_>>());
            let (stable_basis, stable_rates) = pick(&ms, &rest);
            Ok(SubspaceSplit {
                stable_basis,
                unstable_basis,
                horizon: mf.grid[mf.len() - 1] - mf.grid[0],
                domain: Domain::HalfLineMinus,
                stable_rates,
                unstable_rates,
                inconclusive_rates: neutral.iter().map(|&k| ms.rates[k]).collect(),
            })
        }
        (None, None) => Err(Error::InvalidInput("splitting needs at least one half-line flow".into())),
    }
}

/// Step for sampled flows: `opts.step`, shortened where `|A|` is large but
/// never below `T / 20000`.
fn flow_step(sys: &LinearSystem, a: f64, b: f64, step: f64) -> f64 {
    let m = sys.sampled_sup_norm(a, b, 200);
    let h = if m > 0.0 { step.min(0.5 / m) } else { step };
    h.max((b - a) / 20000.0)
}

fn half_flow(sys: &LinearSystem, a: f64, b: f64, opts: &SplitOptions) -> Result<SampledFlow> {
    let h = flow_step(sys, a, b, opts.step);
    let grid = propagate::uniform_grid(a, b, h, Some(0.5 * (a + b)));
    SampledFlow::new(sys, &grid, 0.0, opts.tol)
}

/// Splitting on the line given by `domain`, using horizon `T` on each side.
pub fn estimate_splitting_on(sys: &LinearSystem, horizon: f64, domain: Domain, opts: &SplitOptions) -> Result<SubspaceSplit> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let plus = match domain {
        Domain::FullLine | Domain::HalfLinePlus => Some(half_flow(sys, 0.0, horizon, opts)?),
        Domain::HalfLineMinus => None,
    };
    let minus = match domain {
        Domain::FullLine | Domain::HalfLineMinus => Some(half_flow(sys, -horizon, 0.0, opts)?),
        Domain::HalfLinePlus => None,
    };
    split_flows(plus.as_ref(), minus.as_ref(), opts)
}

/// Splitting on the system's own domain.
pub fn estimate_splitting(sys: &LinearSystem, horizon: f64, opts: &SplitOptions) -> Result<SubspaceSplit> {
    estimate_splitting_on(sys, horizon, sys.domain(), opts)
}

// ---------------------------------------------------------------------------
// Index and the full-line criterion

/// Dimensions entering the index `dim V(+) + dim W(-) - n`.
#[derive(Debug, Clone, Serialize)]
pub struct IndexReport {
    pub stable_dim_plus: usize,
    pub unstable_dim_minus: usize,
    pub n: usize,
    pub index: i64,
}

fn half_line_splits(sys: &LinearSystem, horizon: f64, opts: &SplitOptions) -> Result<(SubspaceSplit, SubspaceSplit)> {
    let plus = estimate_splitting_on(sys, horizon, Domain::HalfLinePlus, opts)?;
    let minus = estimate_splitting_on(sys, horizon, Domain::HalfLineMinus, opts)?;
    for (side, s) in [("[0, T]", &plus), ("[-T, 0]", &minus)] {
        if !s.is_conclusive() {
            return Err(Error::IndexUndetermined(format!(
                "{} direction(s) on {side} with log-slope inside +-{}: {:?}",
                s.inconclusive_rates.len(),
                opts.threshold,
                s.inconclusive_rates
            )));
        }
    }
    Ok((plus, minus))
}

fn index_of(plus: &SubspaceSplit, minus: &SubspaceSplit) -> IndexReport {
    let n = plus.dim();
    let (sp, um) = (plus.stable_basis.ncols(), minus.unstable_basis.ncols());
    IndexReport { stable_dim_plus: sp, unstable_dim_minus: um, n, index: sp as i64 + um as i64 - n as i64 }
}

pub fn dichotomy_index_report(sys: &LinearSystem, horizon: f64, opts: &SplitOptions) -> Result<IndexReport> {
    let (plus, minus) = half_line_splits(sys, horizon, opts)?;
    Ok(index_of(&plus, &minus))
}

/// `dim V` on `[0, T]` plus `dim W` on `[-T, 0]` minus `n`.
pub fn dichotomy_index(sys: &LinearSystem, horizon: f64, opts: &SplitOptions) -> Result<i64> {
    dichotomy_index_report(sys, horizon, opts).map(|r| r.index)
}

#[derive(Debug, Clone)]
pub struct FullLineReport {
    pub plus: DichotomyCertificate,
    pub minus: DichotomyCertificate,
    pub split_plus: SubspaceSplit,
    pub split_minus: SubspaceSplit,
    /// Smallest principal angle between `V` and `W` at time 0.
    pub angle: f64,
    pub index: IndexReport,
    pub passes: bool,
    /// Why the criterion failed; empty when it passes.
    pub reasons: Vec<String>,
}

impl FullLineReport {
    /// Projector with image `V` and kernel `W`, when they are complementary.
    pub fn projector(&self) -> Result<ProjectionMatrix> {
        linalg::oblique_projection(&self.split_plus.stable_basis, &self.split_minus.unstable_basis)
    }
}

/// Smallest admissible angle between `V` and `W` in the full-line test.
pub const MIN_SPLIT_ANGLE: f64 = 0.05;

/// Full-line dichotomy test at horizon `T`: half-line certificates on
/// `[0, T]` (orthogonal projector onto `V`) and `[-T, 0]` (kernel `W`,
/// image its orthogonal complement), `V` and `W` transversal, index zero.
pub fn full_line_criterion(
    sys: &LinearSystem,
    horizon: f64,
    split_opts: &SplitOptions,
    cert_opts: &CertifyOptions,
) -> Result<FullLineReport> {
    let (sp, sm) = half_line_splits(sys, horizon, split_opts)?;
    let n = sys.dim();
    let v = &sp.stable_basis;
    let w = &sm.unstable_basis;
    let p_plus = ProjectionMatrix::new(v * v.transpose(), 1e-8)?;
    let p_minus = ProjectionMatrix::new(Mat::identity(n, n) - w * w.transpose(), 1e-8)?;
    let h = DEFAULT_STEP;
    let plus = certify(sys, &p_plus, (0.0, horizon), &propagate::uniform_grid(0.0, horizon, h, None), cert_opts)?;
    let minus = certify(sys, &p_minus, (-horizon, 0.0), &propagate::uniform_grid(-horizon, 0.0, h, None), cert_opts)?;
    let angle = if v.ncols() + w.ncols() == 0 { std::f64::consts::FRAC_PI_2 } else { linalg::min_principal_angle(v, w) };
    let index = index_of(&sp, &sm);
    let mut reasons = Vec::new();
    if !plus.is_verified() {
        reasons.push(format!("certificate on [0, {horizon}] is {:?}", plus.flag).to_lowercase());
    }
    if !minus.is_verified() {
        reasons.push(format!("certificate on [-{horizon}, 0] is {:?}", minus.flag).to_lowercase());
    }
    if !(angle > MIN_SPLIT_ANGLE) {
        reasons.push(format!("V and W meet: smallest principal angle {angle:.3e}"));
    }
    if index.index != 0 {
        reasons.push(format!("index is {}", index.index));
    }
    Ok(FullLineReport { passes: reasons.is_empty(), plus, minus, split_plus: sp, split_minus: sm, angle, index, reasons })
}

// ---------------------------------------------------------------------------
// Green function

#[derive(Debug, Clone)]
pub struct GreenOptions {
    /// Target accuracy; sets the truncation window when `window` is `None`.
    pub tol: f64,
    /// Half-width `L` of the integration window.
    pub window: Option<f64>,
    /// Spacing of the internal grid.
    pub step: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self { tol: 1e-8, window: None, step: DEFAULT_STEP }
    }
}

/// The Green operator `g -> int G(t, s) g(s) ds` on the nodes of a window,
/// truncated to `[lo, hi]`.
///
/// The two halves of the kernel are evaluated as recursions over grid
/// steps, forward for the `P` part and backward for the `I - P` part, each
/// re-projected after every step. Both recursions only ever apply
/// contracting maps, so no long-horizon transition is inverted.
pub struct GreenOperator<'a> {
    sys: &'a LinearSystem,
    grid: Vec<f64>,
    steps: Vec<Mat>,
    inverses: Vec<Mat>,
    projectors: Vec<Mat>,
    lo: usize,
    hi: usize,
    k: f64,
    alpha: f64,
    /// Half-width requested.
    pub window: f64,
    /// The window was cut short by the system domain.
    pub clipped: bool,
    ode_tol: f64,
}

/// Where the Green integrals may reach: the system domain, cut at the
/// anchor for half-line certificates.
fn green_bounds(sys: &LinearSystem, cert: &DichotomyCertificate) -> (f64, f64) {
    let (dlo, dhi) = domain_bounds(sys.domain());
    match cert.domain {
        Domain::FullLine => (dlo, dhi),
        Domain::HalfLinePlus => (dlo.max(cert.anchor), dhi),
        Domain::HalfLineMinus => (dlo, dhi.min(cert.anchor)),
    }
}

fn window_default(k: f64, alpha: f64, g_sup: f64, tol: f64) -> f64 {
    let l = (4.0 * k * g_sup / (alpha * tol)).ln() / alpha;
    l.clamp(1.0 / alpha, 400.0)
}

fn sampled_sup(g: &dyn Fn(f64) -> Vector, a: f64, b: f64) -> f64 {
    let m = (((b - a) / 0.05) as usize).clamp(64, 40_000);
    (0..=m).map(|k| g(a + (b - a) * k as f64 / m as f64).amax()).fold(0.0, f64::max)
}

impl<'a> GreenOperator<'a> {
    /// Operator returning values on the nodes of `[a - L, b + L]` (clipped
    /// to the system domain).
    pub fn new(
        sys: &'a LinearSystem,
        cert: &DichotomyCertificate,
        a: f64,
        b: f64,
        window: f64,
        step: f64,
        ode_tol: f64,
    ) -> Result<Self> {
        if !cert.is_verified() {
            return Err(Error::CertificateRequired);
        }
        if cert.projector.dim() != sys.dim() {
            return Err(Error::Shape("certificate and system dimensions differ".into()));
        }
        if !(a <= b) || !(window > 0.0) {
            return Err(Error::InvalidInput(format!("bad Green window: [{a}, {b}] with L = {window}")));
        }
        let (dlo, dhi) = green_bounds(sys, cert);
        let lo = (a - window).max(dlo);
        let hi = (b + window).min(dhi);
        let clipped = lo > a - window || hi < b + window;
        sys.check_time(a)?;
        sys.check_time(b)?;
        let m = sys.sampled_sup_norm(lo.min(cert.anchor), hi.max(cert.anchor), 400);
        let h = if m > 0.0 { step.min(0.5 / m) } else { step };
        let grid = piecewise_grid(&[lo, hi, a, b, cert.anchor], h);
        let flow = SampledFlow::new(sys, &grid, cert.anchor, ode_tol)?;
        let projectors = contracting_projectors(&flow, &cert.projector, 0)?;
        let inverses = flow.steps.iter().map(linalg::inverse).collect::<Result<Vec<_>>>()?;
        let lo_i = propagate::nearest(&grid, lo);
        let hi_i = propagate::nearest(&grid, hi);
        Ok(Self {
            sys,
            grid,
            steps: flow.steps,
            inverses,
            projectors,
            lo: lo_i,
            hi: hi_i,
            k: cert.k,
            alpha: cert.alpha,
            window,
            clipped,
            ode_tol,
        })
    }

    /// Nodes at which [`GreenOperator::apply`] returns values.
    pub fn times(&self) -> &[f64] {
        &self.grid[self.lo..=self.hi]
    }

    /// `2 K |g| e^{-alpha L} / alpha`.
    pub fn truncation_bound(&self, g_sup: f64) -> f64 {
        2.0 * self.k * g_sup * (-self.alpha * self.window).exp() / self.alpha
    }

    /// `q_k = int_{t_k}^{t_{k+1}} X(t_{k+1}, s) g(s) ds` for every step.
    fn step_integrals(&self, g: &dyn Fn(f64) -> Vector) -> Result<Vec<Vector>> {
        let n = self.sys.dim();
        let opts = OdeOptions::with_tol(self.ode_tol).sparse();
        let zero = vec![0.0; n];
        (self.lo..self.hi)
            .map(|k| {
                let mut field = matrix_rhs(self.sys);
                let forced = |t: f64, y: &[f64], dy: &mut [f64]| {
                    field(t, y, dy);
                    let gt = g(t);
                    dy.iter_mut().zip(gt.iter()).for_each(|(d, v)| *d += v);
                };
                let tr = ode::solve(forced, self.grid[k], &zero, self.grid[k + 1], &opts)?;
                Ok(Vector::from_column_slice(tr.final_state()))
            })
            .collect()
    }

    /// Values of the truncated bounded solution at [`GreenOperator::times`].
    pub fn apply(&self, g: &dyn Fn(f64) -> Vector) -> Result<Vec<Vector>> {
        let n = self.sys.dim();
        let id = Mat::identity(n, n);
        let q = self.step_integrals(g)?;
        let count = self.hi - self.lo + 1;
        let mut u = vec![Vector::zeros(n); count];
        for k in self.lo..self.hi {
            let i = k - self.lo;
            u[i + 1] = &self.projectors[k + 1] * (&self.steps[k] * &u[i] + &q[i]);
        }
        let mut v = vec![Vector::zeros(n); count];
        for k in (self.lo..self.hi).rev() {
            let i = k - self.lo;
            let unstable_q = (&id - &self.projectors[k + 1]) * &q[i];
            v[i] = (&id - &self.projectors[k]) * (&self.inverses[k] * (&v[i + 1] - unstable_q));
        }
        Ok(u.into_iter().zip(v).map(|(a, b)| a + b).collect())
    }
}

/// Bounded solution sampled on the nodes of `[a, b]`.
#[derive(Debug, Clone)]
pub struct GreenSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Half-width `L` of the truncated integrals.
    pub window: f64,
    /// `2 K |g| e^{-alpha L} / alpha`.
    pub truncation_bound: f64,
    /// Sampled `sup |g|` over the window.
    pub g_sup: f64,
    pub clipped: bool,
}

fn green_window(
    cert: &DichotomyCertificate,
    g: &dyn Fn(f64) -> Vector,
    a: f64,
    b: f64,
    (dlo, dhi): (f64, f64),
    opts: &GreenOptions,
) -> (f64, f64) {
    let sup_on = |l: f64| sampled_sup(g, (a - l).max(dlo), (b + l).min(dhi));
    match opts.window {
        Some(l) => (l, sup_on(l)),
        None => {
            let s0 = sup_on(1.0);
            let l0 = window_default(cert.k, cert.alpha, s0.max(opts.tol), opts.tol);
            let s1 = sup_on(l0).max(s0);
            let l1 = window_default(cert.k, cert.alpha, s1.max(opts.tol), opts.tol);
            (l1, sup_on(l1).max(s1))
        }
    }
}

/// `x*(t) = int G(t, s) g(s) ds` on the nodes of `[a, b]`.
pub fn green_solution(
    sys: &LinearSystem,
    cert: &DichotomyCertificate,
    g: &dyn Fn(f64) -> Vector,
    a: f64,
    b: f64,
    opts: &GreenOptions,
) -> Result<GreenSolution> {
    if !cert.is_verified() {
        return Err(Error::CertificateRequired);
    }
    let probe = g(a);
    if probe.len() != sys.dim() {
        return Err(Error::Shape(format!("forcing has {} components, system dimension is {}", probe.len(), sys.dim())));
    }
    let (window, g_sup) = green_window(cert, g, a, b, green_bounds(sys, cert), opts);
    let op = GreenOperator::new(sys, cert, a, b, window, opts.step, opts.tol * 1e-2)?;
    let values = op.apply(g)?;
    let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
    let (times, states): (Vec<f64>, Vec<Vector>) = op
        .times()
        .iter()
        .copied()
        .zip(values)
        .filter(|(t, _)| *t >= a - slack && *t <= b + slack)
        .unzip();
    Ok(GreenSolution { times, states, window, truncation_bound: op.truncation_bound(g_sup), g_sup, clipped: op.clipped })
}

/// Value of the bounded solution at `t`.
#[derive(Debug, Clone)]
pub struct GreenValue {
    pub x: Vector,
    pub window: f64,
    pub truncation_bound: f64,
    pub clipped: bool,
}

pub fn green_apply(
    sys: &LinearSystem,
    cert: &DichotomyCertificate,
    g: &dyn Fn(f64) -> Vector,
    t: f64,
    opts: &GreenOptions,
) -> Result<GreenValue> {
    let sol = green_solution(sys, cert, g, t, t, opts)?;
    let x = sol.states.into_iter().next().ok_or_else(|| Error::NumericalInconsistency("empty Green window".into()))?;
    Ok(GreenValue { x, window: sol.window, truncation_bound: sol.truncation_bound, clipped: sol.clipped })
}

/// `sup |x*| <= (2K / alpha) sup |g| (1 + tol)` on the sampled nodes.
pub fn sup_bound_check(cert: &DichotomyCertificate, sol: &GreenSolution, tol: f64) -> bool {
    let sup = sol.states.iter().map(|x| x.norm()).fold(0.0, f64::max);
    sup <= 2.0 * cert.k / cert.alpha * sol.g_sup * (1.0 + tol)
}

// ---------------------------------------------------------------------------
// Lipschitz fixed point

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
    pub window: Option<f64>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, step: DEFAULT_STEP, window: None }
    }
}

/// Bounded solution `w* = int G(t, s) h(s, w*(s)) ds`.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    /// All nodes of the truncated window.
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Node range covering the requested interval.
    pub range: (usize, usize),
    pub iterations: usize,
    pub last_change: f64,
    /// Contraction factor `2 K gamma / alpha`.
    pub q: f64,
    /// `ceil(ln(tol (1 - q) / C0) / ln q) + 1` with `C0` the first change.
    pub iteration_bound: usize,
    /// `sup |w - G h(w)|` over the requested interval.
    pub residual: f64,
    pub window: f64,
}

impl FixedPoint {
    /// Cubic interpolation between nodes.
    pub fn at(&self, t: f64) -> Vector {
        interp4(&self.times, &self.states, t)
    }
}

/// Lagrange interpolation through the four nodes nearest `t`.
pub(crate) fn interp4(times: &[f64], values: &[Vector], t: f64) -> Vector {
    let len = times.len();
    if len < 4 {
        let k = propagate::nearest(times, t);
        return values[k].clone();
    }
    let pos = times.partition_point(|&s| s < t);
    let start = pos.saturating_sub(2).min(len - 4);
    let mut out = Vector::zeros(values[0].len());
    for i in start..start + 4 {
        let mut w = 1.0;
        for j in start..start + 4 {
            if j != i {
                w *= (t - times[j]) / (times[i] - times[j]);
            }
        }
        out.axpy(w, &values[i], 1.0);
    }
    out
}

/// Picard iteration `w_{k+1} = G h(., w_k)` from `w_0 = 0` on `[a, b]`.
pub fn lipschitz_fixed_point(
    sys: &LinearSystem,
    cert: &DichotomyCertificate,
    h: &dyn Fn(f64, &[f64]) -> Vector,
    gamma: f64,
    a: f64,
    b: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPoint> {
    if !cert.is_verified() {
        return Err(Error::CertificateRequired);
    }
    let q = 2.0 * cert.k * gamma / cert.alpha;
    if !(q < 1.0) {
        return Err(Error::GapViolation { q });
    }
    let n = sys.dim();
    let zero = vec![0.0; n];
    let h0 = |t: f64| h(t, &zero);
    let window = match opts.window {
        Some(l) => l,
        None => {
            let s = sampled_sup(&h0, a - 1.0, b + 1.0).max(opts.tol);
            window_default(cert.k, cert.alpha, s / (1.0 - q), opts.tol)
        }
    };
    let op = GreenOperator::new(sys, cert, a, b, window, opts.step, opts.tol * 1e-3)?;
    let times = op.times().to_vec();
    let mut phi = vec![Vector::zeros(n); times.len()];
    let stop = opts.tol * (1.0 - q);
    let mut first_change = None;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    fn forcing<'a>(
        times: &'a [f64],
        phi: &'a [Vector],
        h: &'a dyn Fn(f64, &[f64]) -> Vector,
    ) -> impl Fn(f64) -> Vector + 'a {
        move |s| h(s, interp4(times, phi, s).as_slice())
    }
    while iterations < opts.max_iter {
        iterations += 1;
        let next = op.apply(&forcing(&times, &phi, h))?;
        change = next.iter().zip(&phi).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
        first_change.get_or_insert(change);
        phi = next;
        if change <= stop {
            break;
        }
    }
    if change > stop {
        return Err(Error::NoConvergence { iterations, change });
    }
    let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
    let i0 = times.partition_point(|&t| t < a - slack);
    let i1 = times.partition_point(|&t| t <= b + slack).saturating_sub(1);
    let check = op.apply(&forcing(&times, &phi, h))?;
    let residual = (i0..=i1).map(|i| (&check[i] - &phi[i]).amax()).fold(0.0, f64::max);
    let c0 = first_change.unwrap_or(0.0);
    let iteration_bound = if c0 <= stop || q == 0.0 {
        1
    } else {
        ((stop / c0).ln() / q.ln()).ceil().max(0.0) as usize + 1
    };
    Ok(FixedPoint { times, states: phi, range: (i0, i1), iterations, last_change: change, q, iteration_bound, residual, window })
}

// ---------------------------------------------------------------------------
// Noncriticality

#[derive(Debug, Clone, Serialize)]
pub struct Noncriticality {
    pub holds: bool,
    /// Largest `|x(t)| / sup_{|u-t| <= T} |x(u)|` seen.
    pub margin: f64,
    pub worst_time: f64,
    pub theta: f64,
    pub horizon: f64,
    pub probes: usize,
}

/// Smallest `T` with `K^-1 e^{alpha T} - K e^{-alpha T} >= 2 / theta`, the
/// horizon at which a dichotomy forces noncriticality with constant `theta`.
pub fn noncriticality_horizon(k: f64, alpha: f64, theta: f64) -> f64 {
    let c = 2.0 / theta;
    let y = k * (c + (c * c + 4.0).sqrt()) / 2.0;
    y.ln() / alpha
}

/// Checks `|x(t)| <= theta sup_{|u-t| <= T} |x(u)|` at every `t` of `grid`
/// for `probes` random solutions. The supremum is sampled with spacing
/// `T / 50`.
pub fn noncriticality_test(
    sys: &LinearSystem,
    horizon: f64,
    theta: f64,
    grid: &[f64],
    probes: usize,
    seed: u64,
    tol: f64,
) -> Result<Noncriticality> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidInput(format!("theta must lie in (0, 1), got {theta}")));
    }
    if !(horizon > 0.0) || grid.is_empty() {
        return Err(Error::InvalidInput("noncriticality needs T > 0 and a nonempty grid".into()));
    }
    let n = sys.dim();
    let g0 = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let g1 = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (g0 - horizon, g1 + horizon);
    sys.check_time(lo)?;
    sys.check_time(hi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = 0.0f64;
    let mut worst_time = grid[0];
    const SUBDIV: usize = 50;
    for _ in 0..probes.max(1) {
        let start = if g1 > g0 { rng.random_range(g0..=g1) } else { g0 };
        let mut xi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        xi.iter_mut().for_each(|v| *v /= norm);
        let fwd = propagate::integrate_ivp(sys, start, &xi, hi, tol)?;
        let bwd = propagate::integrate_ivp(sys, start, &xi, lo, tol)?;
        let size = |u: f64| {
            let s = if u >= start { fwd.at(u) } else { bwd.at(u) };
            s.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        for &t in grid {
            let here = size(t);
            let sup = (0..=2 * SUBDIV)
                .map(|k| size(t - horizon + horizon * k as f64 / SUBDIV as f64))
                .fold(0.0, f64::max);
            let ratio = if sup > 0.0 { here / sup } else { 1.0 };
            if ratio > margin {
                margin = ratio;
                worst_time = t;
            }
        }
    }
    Ok(Noncriticality { holds: margin <= theta, margin, worst_time, theta, horizon, probes: probes.max(1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::canonical_projection;
    use crate::system::{builtin, markus_yamabe};

    fn diag(v: &[f64]) -> LinearSystem {
        LinearSystem::constant("diag", Mat::from_diagonal(&Vector::from_column_slice(v)))
    }

    fn proj(d: &[f64]) -> ProjectionMatrix {
        ProjectionMatrix::new(Mat::from_diagonal(&Vector::from_column_slice(d)), 1e-12).unwrap()
    }

    fn lin(name: &str) -> LinearSystem {
        builtin(name).unwrap().linear().clone()
    }

    #[test]
    fn markus_yamabe_certificate() {
        let grid = propagate::uniform_grid(-6.0, 6.0, 0.1, None);
        let cert = certify(&markus_yamabe(), &proj(&[0.0, 1.0]), (-6.0, 6.0), &grid, &CertifyOptions::default()).unwrap();
        assert!(cert.is_verified(), "{cert:?}");
        assert!(cert.alpha >= 0.45 && cert.alpha <= 0.5, "alpha {}", cert.alpha);
        assert!(cert.k >= 1.0 && cert.k <= 1.05, "K {}", cert.k);
        assert_eq!(cert.domain, Domain::FullLine);
    }

    #[test]
    fn wrong_projector_is_violated() {
        let grid = propagate::uniform_grid(-6.0, 6.0, 0.2, None);
        let cert = certify(&markus_yamabe(), &proj(&[1.0, 0.0]), (-6.0, 6.0), &grid, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.flag, CertificateFlag::Violated);
    }

    #[test]
    fn constant_diagonal_rate() {
        let grid = propagate::uniform_grid(-5.0, 5.0, 0.1, None);
        let cert = certify(&diag(&[1.0, 1.0, -1.0]), &proj(&[0.0, 0.0, 1.0]), (-5.0, 5.0), &grid, &CertifyOptions::default())
            .unwrap();
        assert!(cert.is_verified());
        assert!((cert.alpha - 0.99).abs() < 1e-6 && (cert.k - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bounded_scalar_is_not_a_dichotomy() {
        let grid = propagate::uniform_grid(0.0, 20.0, 0.1, None);
        let cert = certify(&lin("scalar_arctan"), &proj(&[1.0]), (0.0, 20.0), &grid, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.flag, CertificateFlag::Violated);
        let zero = diag(&[0.0]);
        let cert = certify(&zero, &proj(&[1.0]), (0.0, 20.0), &grid, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.flag, CertificateFlag::Violated);
    }

    #[test]
    fn explicit_candidates() {
        let grid = propagate::uniform_grid(0.0, 10.0, 0.1, None);
        let opts = CertifyOptions { alpha_candidates: Some(vec![0.25, 0.5, 0.75]), ..Default::default() };
        let cert = certify(&diag(&[-0.5]), &proj(&[1.0]), (0.0, 10.0), &grid, &opts).unwrap();
        assert_eq!(cert.alpha, 0.5);
        assert!(cert.is_verified());
    }

    #[test]
    fn splitting_examples() {
        let opts = SplitOptions::default();
        let s = estimate_splitting(&diag(&[1.0, 1.0, -1.0]), 10.0, &opts).unwrap();
        assert_eq!((s.stable_basis.ncols(), s.unstable_basis.ncols()), (1, 2));
        assert!(s.stable_basis[(2, 0)].abs() > 1.0 - 1e-8);
        assert!(s.is_conclusive() && s.complementary());

        let s = estimate_splitting(&markus_yamabe(), 10.0, &opts).unwrap();
        assert!(s.stable_basis[(1, 0)].abs() > 1.0 - 1e-6, "{}", s.stable_basis);
        assert!(s.unstable_basis[(0, 0)].abs() > 1.0 - 1e-6, "{}", s.unstable_basis);
        assert!((s.stable_rates[0] + 1.0).abs() < 0.02 && (s.unstable_rates[0] - 0.5).abs() < 0.02, "{s:?}");

        let s = estimate_splitting(&diag(&[0.0, 0.0]), 10.0, &opts).unwrap();
        assert_eq!(s.inconclusive_rates.len(), 4);
        assert!(!s.is_conclusive());
    }

    #[test]
    fn index_examples() {
        let opts = SplitOptions::default();
        assert_eq!(dichotomy_index(&diag(&[1.0, 1.0, -1.0]), 10.0, &opts).unwrap(), 0);
        assert_eq!(dichotomy_index(&lin("palmer_tanh"), 10.0, &opts).unwrap(), 1);
        assert_eq!(dichotomy_index(&diag(&[-1.0, -1.0]), 10.0, &opts).unwrap(), 0);
        assert!(matches!(dichotomy_index(&diag(&[0.0]), 10.0, &opts), Err(Error::IndexUndetermined(_))));
    }

    #[test]
    fn full_line_examples() {
        let (so, co) = (SplitOptions::default(), CertifyOptions::default());
        assert!(full_line_criterion(&markus_yamabe(), 10.0, &so, &co).unwrap().passes);
        assert!(full_line_criterion(&diag(&[1.0, 1.0, -1.0]), 10.0, &so, &co).unwrap().passes);
        let r = full_line_criterion(&lin("palmer_tanh"), 10.0, &so, &co).unwrap();
        assert!(!r.passes && r.index.index == 1);
    }

    #[test]
    fn green_scalar_decay() {
        let sys = diag(&[-1.0]);
        let grid = propagate::uniform_grid(-5.0, 5.0, 0.1, None);
        let cert = certify(&sys, &proj(&[1.0]), (-5.0, 5.0), &grid, &CertifyOptions::default()).unwrap();
        let one = |_: f64| Vector::from_element(1, 1.0);
        let opts = GreenOptions { window: Some(6.0), ..Default::default() };
        let v = green_apply(&sys, &cert, &one, 0.7, &opts).unwrap();
        assert!((v.x[0] - (1.0 - (-6f64).exp())).abs() < 1e-9, "{}", v.x[0]);
        let v = green_apply(&sys, &cert, &one, 0.7, &GreenOptions::default()).unwrap();
        assert!((v.x[0] - 1.0).abs() < 1e-8);
        let zero = |_: f64| Vector::zeros(1);
        assert_eq!(green_apply(&sys, &cert, &zero, 0.0, &GreenOptions::default()).unwrap().x[0], 0.0);
    }

    #[test]
    fn green_needs_certificate() {
        let sys = diag(&[0.0]);
        let grid = propagate::uniform_grid(0.0, 5.0, 0.1, None);
        let cert = certify(&sys, &proj(&[1.0]), (0.0, 5.0), &grid, &CertifyOptions::default()).unwrap();
        let one = |_: f64| Vector::from_element(1, 1.0);
        assert!(matches!(green_apply(&sys, &cert, &one, 0.0, &GreenOptions::default()), Err(Error::CertificateRequired)));
    }

    #[test]
    fn fixed_point_trivial_cases() {
        let sys = diag(&[-1.0]);
        let grid = propagate::uniform_grid(-5.0, 5.0, 0.1, None);
        let cert = certify(&sys, &canonical_projection(1, 1).unwrap(), (-5.0, 5.0), &grid, &CertifyOptions::default()).unwrap();
        let zero = |_: f64, _: &[f64]| Vector::zeros(1);
        let fp = lipschitz_fixed_point(&sys, &cert, &zero, 0.0, 0.0, 1.0, &FixedPointOptions::default()).unwrap();
        assert_eq!(fp.iterations, 1);
        let sine = |_: f64, y: &[f64]| Vector::from_element(1, 0.1 * y[0].sin());
        let fp = lipschitz_fixed_point(&sys, &cert, &sine, 0.1, 0.0, 1.0, &FixedPointOptions::default()).unwrap();
        assert!(fp.states.iter().all(|x| x[0] == 0.0));
        assert!(matches!(
            lipschitz_fixed_point(&sys, &cert, &sine, 0.6, 0.0, 1.0, &FixedPointOptions::default()),
            Err(Error::GapViolation { .. })
        ));
    }

    #[test]
    fn noncriticality_basics() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let r = noncriticality_test(&diag(&[0.0, 0.0]), 2.0, 0.9, &grid, 4, 0, 1e-10).unwrap();
        assert!(!r.holds && (r.margin - 1.0).abs() < 1e-12);
        let t = noncriticality_horizon(1.0, 0.5, 0.9);
        assert!(((0.5 * t).exp() - (-0.5 * t).exp() - 2.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn coppel_projector_grows() {
        let sys = lin("coppel_counterexample");
        let g = projector_growth(&sys, &proj(&[1.0, 0.0]), 0.0, 4.0, 0.05, 0.05, 1e-10).unwrap();
        assert!(!g.bounded && g.slope > 1.0);
        let g = projector_growth(&markus_yamabe(), &proj(&[0.0, 1.0]), -4.0, 4.0, 0.05, 0.05, 1e-10).unwrap();
        assert!(g.bounded);
    }
}
