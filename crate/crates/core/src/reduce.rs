//! Block diagonalization by kinematic similarity.
//!
//! For a fundamental matrix `Y(t)` whose column blocks `Y_i` span invariant
//! subspaces, `R(t) = blockdiag((Y_i^T Y_i)^{1/2})` and `S = Y R^{-1}` turn
//! `x' = A(t) x` into `y' = B(t) y` with block diagonal `B = R' R^{-1}`.
//! Every block `Y_i` is stored as an orthonormal basis times a small
//! coefficient matrix, so the blocks never have to be propagated against
//! their own dominance.

use serde::Serialize;

use crate::dichotomy::{self, certify_flow, qr_positive, random_frame, sweep_frames, CertifyOptions, DichotomyCertificate};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, ProjectionMatrix};
use crate::propagate::{self, track_subspace, SampledFlow};
use crate::spectrum::{self, rank_step_function, SpectrumOptions, SpectrumReport, Verdict};
use crate::system::LinearSystem;

#[derive(Debug, Clone)]
pub struct ReduceOptions {
    /// Integration tolerance of the step transitions.
    pub tol: f64,
    /// Log-slope of `|X P X^-1|` above which the projector counts as growing.
    pub growth_threshold: f64,
    /// A growing projector must also exceed this norm to be refused.
    pub growth_cap: f64,
    /// Extra time past the grid end over which the spectral flag converges.
    pub pad: f64,
    pub seed: u64,
    pub spectrum: SpectrumOptions,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        Self { tol: 1e-12, growth_threshold: 0.05, growth_cap: 10.0, pad: 20.0, seed: 0, spectrum: SpectrumOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ReductionResult {
    pub grid: Vec<f64>,
    pub s_samples: Vec<Mat>,
    pub r_samples: Vec<Mat>,
    /// `R' R^{-1}` by forward differences (backward at the last node).
    pub b_samples: Vec<Mat>,
    pub block_sizes: Vec<usize>,
    /// Constant change of basis taking the projector to `diag(I_r, 0)`.
    pub basis: Mat,
    /// Shift `lambda` of the system the blocks dichotomize (`A - lambda I`).
    pub shift: f64,
    /// Dimension of the contracting part of the shifted system: the leading
    /// block of a two-block reduction, `n` or `0` for a single block.
    pub stable_rank: usize,
    pub s_norm_bound: f64,
    pub s_inv_norm_bound: f64,
    /// Largest `|S^{-1}(t_k)|` relative to its bound
    /// `(|P(t_k)|^2 + |I - P(t_k)|^2)^{1/2}`; empty bound for spectral reductions.
    pub s_inv_bound_ratio: Option<f64>,
    /// Largest `|(S_{k+1} - S_k)/h - A S_k + S_k B_k|`.
    pub similarity_residual: f64,
    /// Largest `|R P - P R|`.
    pub commutation_defect: f64,
    /// Largest entry of `B` outside the diagonal blocks.
    pub block_defect: f64,
    /// Largest `|S P S^-1 - X P X^-1|` for two-block reductions.
    pub projection_defect: Option<f64>,
    /// Largest coupling dropped from the spectral flag, relative to the step.
    pub flag_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionReport {
    pub block_sizes: Vec<usize>,
    pub grid: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub residual: f64,
    pub s_norm_bound: f64,
    pub s_inv_norm_bound: f64,
    pub shift: f64,
}

impl ReductionResult {
    pub fn report(&self) -> ReductionReport {
        ReductionReport {
            block_sizes: self.block_sizes.clone(),
            grid: self.grid.clone(),
            s: self.s_samples.iter().map(linalg::rows).collect(),
            b: self.b_samples.iter().map(linalg::rows).collect(),
            residual: self.similarity_residual,
            s_norm_bound: self.s_norm_bound,
            s_inv_norm_bound: self.s_inv_norm_bound,
            shift: self.shift,
        }
    }

    fn offsets(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .scan(0, |acc, &m| {
                let o = *acc;
                *acc += m;
                Some(o)
            })
            .collect()
    }

    /// Flow of block `i`, `Y_i(t_{k+1}, t_k) = R_i(t_{k+1}) R_i(t_k)^{-1}`,
    /// anchored at the first node.
    pub fn block_flow(&self, i: usize) -> Result<SampledFlow> {
        let (o, m) = (self.offsets()[i], self.block_sizes[i]);
        let blocks: Vec<Mat> = self.r_samples.iter().map(|r| r.view((o, o), (m, m)).into_owned()).collect();
        let steps = blocks.windows(2).map(|w| Ok(&w[1] * linalg::inverse(&w[0])?)).collect::<Result<Vec<_>>>()?;
        SampledFlow::from_steps(self.grid.clone(), steps, 0)
    }

    /// Half-line spectrum of every block over the grid.
    pub fn block_spectra(&self, window: f64, opts: &SpectrumOptions) -> Result<Vec<SpectrumReport>> {
        (0..self.block_sizes.len()).map(|i| spectrum::flow_spectrum(&self.block_flow(i)?, window, opts)).collect()
    }
}

/// Column block of a fundamental matrix at one node: `Y_i = E G`, with `E`
/// orthonormal.
struct BlockSample {
    basis: Mat,
    coeff: Mat,
}

/// `R` and `S` at every node from the block samples.
fn assemble(blocks: &[Vec<BlockSample>], n: usize) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let len = blocks[0].len();
    let mut rs = Vec::with_capacity(len);
    let mut ss = Vec::with_capacity(len);
    for k in 0..len {
        let mut r = Mat::zeros(n, n);
        let mut s = Mat::zeros(n, n);
        let mut o = 0;
        for block in blocks {
            let BlockSample { basis, coeff } = &block[k];
            let m = coeff.ncols();
            let ri = linalg::spd_sqrt(&(coeff.transpose() * coeff))?;
            let si = basis * coeff * linalg::inverse(&ri)?;
            r.view_mut((o, o), (m, m)).copy_from(&ri);
            s.columns_mut(o, m).copy_from(&si);
            o += m;
        }
        rs.push(r);
        ss.push(s);
    }
    Ok((rs, ss))
}

fn block_mask(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(i, &m)| std::iter::repeat_n(i, m)).collect()
}

/// `B`, the similarity residual and the structural defects.
fn finish(
    sys: &LinearSystem,
    grid: &[f64],
    rs: Vec<Mat>,
    ss: Vec<Mat>,
    block_sizes: Vec<usize>,
    basis: Mat,
    shift: f64,
) -> Result<ReductionResult> {
    let n = sys.dim();
    let len = grid.len();
    let mut bs = Vec::with_capacity(len);
    for k in 0..len - 1 {
        let h = grid[k + 1] - grid[k];
        bs.push((&rs[k + 1] - &rs[k]) / h * linalg::inverse(&rs[k])?);
    }
    let h = grid[len - 1] - grid[len - 2];
    bs.push((&rs[len - 1] - &rs[len - 2]) / h * linalg::inverse(&rs[len - 1])?);
    let mut residual = 0.0f64;
    for k in 0..len - 1 {
        let h = grid[k + 1] - grid[k];
        let a = sys.coeff_unchecked(grid[k]);
        let ds = (&ss[k + 1] - &ss[k]) / h;
        residual = residual.max(linalg::norm2(&(ds - a * &ss[k] + &ss[k] * &bs[k])));
    }
    let mask = block_mask(&block_sizes);
    let mut block_defect = 0.0f64;
    for b in &bs {
        for i in 0..n {
            for j in 0..n {
                if mask[i] != mask[j] {
                    block_defect = block_defect.max(b[(i, j)].abs());
                }
            }
        }
    }
    let mut commutation_defect = 0.0f64;
    let mut s_norm_bound = 0.0f64;
    let mut s_inv_norm_bound = 0.0f64;
    let pr = Mat::from_fn(n, n, |i, j| if i == j && mask[i] == 0 { 1.0 } else { 0.0 });
    for (r, s) in rs.iter().zip(&ss) {
        commutation_defect = commutation_defect.max(linalg::norm2(&(r * &pr - &pr * r)));
        s_norm_bound = s_norm_bound.max(linalg::norm2(s));
        s_inv_norm_bound = s_inv_norm_bound.max(linalg::norm2(&linalg::inverse(s)?));
    }
    Ok(ReductionResult {
        grid: grid.to_vec(),
        s_samples: ss,
        r_samples: rs,
        b_samples: bs,
        block_sizes,
        basis,
        shift,
        stable_rank: 0,
        s_norm_bound,
        s_inv_norm_bound,
        s_inv_bound_ratio: None,
        similarity_residual: residual,
        commutation_defect,
        block_defect,
        projection_defect: None,
        flag_defect: 0.0,
    })
}

/// Running products `G_k` with `G_anchor = I`, `G_{k+1} = C_k G_k`.
fn coefficient_products(coeffs: &[Mat], anchor: usize, m: usize) -> Result<Vec<Mat>> {
    let len = coeffs.len() + 1;
    let mut g = vec![Mat::identity(m, m); len];
    for k in anchor..len - 1 {
        g[k + 1] = &coeffs[k] * &g[k];
    }
    for k in (0..anchor).rev() {
        g[k] = linalg::inverse(&coeffs[k])? * &g[k + 1];
    }
    Ok(g)
}

/// Reduces `sys` on `grid` to two blocks with the projector `p` placed at
/// the node nearest 0: `Y = X T` for the constant `T = [V W]` of orthonormal
/// bases of `p`'s image and kernel, so that `T^{-1} P T = diag(I_r, 0)`.
///
/// The image and kernel are tracked from the anchor in both directions;
/// the result is accurate while `e^{gap * |t|}` stays far below `1 / eps`.
pub fn coppel_similarity(
    sys: &LinearSystem,
    p: &ProjectionMatrix,
    grid: &[f64],
    opts: &ReduceOptions,
) -> Result<ReductionResult> {
    let n = sys.dim();
    if p.dim() != n {
        return Err(Error::Shape(format!("projector is {0}x{0}, system dimension is {n}", p.dim())));
    }
    let flow = SampledFlow::new(sys, grid, 0.0, opts.tol)?;
    let (image, kernel) = dichotomy::image_and_kernel(p);
    let vt = track_subspace(&flow, &image)?;
    let wt = track_subspace(&flow, &kernel)?;
    let projectors = dichotomy::projectors_from(&vt.bases, &wt.bases);
    let projectors = match projectors {
        Ok(ps) => ps,
        Err(Error::SingularMatrix { .. }) => {
            return Err(Error::NotReducibleHere("the projected subspaces merge on the grid".into()))
        }
        Err(e) => return Err(e),
    };
    let norms: Vec<f64> = projectors.iter().map(linalg::norm2).collect();
    let logs: Vec<f64> = norms.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = dichotomy::ls_slope(&flow.grid, &logs).abs();
    let worst = norms.iter().copied().fold(0.0, f64::max);
    if slope > opts.growth_threshold && worst > opts.growth_cap {
        return Err(Error::NotReducibleHere(format!(
            "|X(t) P X^-1(t)| grows with log-slope {slope:.3} to {worst:.3e} on the grid"
        )));
    }
    let r = p.rank;
    let mut blocks = Vec::new();
    let mut block_sizes = Vec::new();
    for (track, m) in [(&vt, r), (&wt, n - r)] {
        if m == 0 {
            continue;
        }
        let g = coefficient_products(&track.coeffs, flow.anchor, m)?;
        blocks.push(track.bases.iter().zip(g).map(|(e, g)| BlockSample { basis: e.clone(), coeff: g }).collect());
        block_sizes.push(m);
    }
    let mut basis = Mat::zeros(n, n);
    basis.columns_mut(0, r).copy_from(&image);
    basis.columns_mut(r, n - r).copy_from(&kernel);
    let (rs, ss) = assemble(&blocks, n)?;
    let mut res = finish(sys, &flow.grid, rs, ss, block_sizes, basis, 0.0)?;
    let pr = Mat::from_fn(n, n, |i, j| if i == j && i < r { 1.0 } else { 0.0 });
    let mut defect = 0.0f64;
    let mut ratio = 0.0f64;
    for (s, pk) in res.s_samples.iter().zip(&projectors) {
        let s_inv = linalg::inverse(s)?;
        defect = defect.max(linalg::norm2(&(s * &pr * &s_inv - pk)) / linalg::norm2(pk).max(1.0));
        let bound = (linalg::norm2(pk).powi(2) + linalg::norm2(&(Mat::identity(n, n) - pk)).powi(2)).sqrt();
        ratio = ratio.max(linalg::norm2(&s_inv) / bound);
    }
    res.stable_rank = r;
    res.projection_defect = Some(defect);
    res.s_inv_bound_ratio = Some(ratio);
    Ok(res)
}

/// Certificates of the two blocks of a reduction: the leading block
/// contracts (projector `I`), the trailing block expands (projector `0`),
/// both for the shifted system `B - shift I`. A one-block reduction yields
/// the single certificate its block admits.
pub fn subsystem_dichotomies(res: &ReductionResult, opts: &CertifyOptions) -> Result<Vec<DichotomyCertificate>> {
    if res.block_sizes.len() > 2 {
        return Err(Error::InvalidInput(format!(
            "subsystem certificates need at most two blocks, got {}",
            res.block_sizes.len()
        )));
    }
    let mut out = Vec::new();
    for (i, &m) in res.block_sizes.iter().enumerate() {
        let flow = res.block_flow(i)?.shifted(res.shift);
        let flow = SampledFlow { anchor: propagate::nearest(&flow.grid, 0.0), ..flow };
        let contracting = i == 0 && res.stable_rank == m;
        let p = linalg::canonical_projection(if contracting { m } else { 0 }, m)?;
        out.push(certify_flow(&flow, &p, None, opts)?);
    }
    Ok(out)
}

/// Spectral block diagonalization on `grid`, one block per interval of
/// `spectrum` in increasing order.
///
/// Each gap is certified from the top down by the shifted-system test; the
/// nested stable subspaces at every node come from one backward QR sweep
/// started `opts.pad` past the grid end, and the coupling that the flag
/// must not carry is dropped and reported as `flag_defect`.
pub fn spectral_block_diagonalize(
    sys: &LinearSystem,
    spectrum: &SpectrumReport,
    grid: &[f64],
    opts: &ReduceOptions,
) -> Result<ReductionResult> {
    let n = sys.dim();
    if spectrum.intervals.iter().any(|i| i.unbounded_left || i.unbounded_right) {
        return Err(Error::InvalidInput("block diagonalization needs bounded spectral intervals".into()));
    }
    let ell = spectrum.intervals.len();
    let flow = SampledFlow::new(sys, grid, grid[0], opts.tol)?;
    if ell < 2 {
        let blocks = vec![flow_fundamentals(&flow)?];
        let (rs, ss) = assemble(&blocks, n)?;
        let mut res = finish(sys, &flow.grid, rs, ss, vec![n], Mat::identity(n, n), 0.0)?;
        res.stable_rank = if spectrum.intervals.iter().all(|i| i.bounds[1] < 0.0) { n } else { 0 };
        return Ok(res);
    }
    let lambdas: Vec<f64> = (1..ell)
        .rev()
        .map(|j| 0.5 * (spectrum.intervals[j - 1].bounds[1] + spectrum.intervals[j].bounds[0]))
        .collect();
    let profile = rank_step_function(sys, &lambdas, spectrum.horizon, &opts.spectrum)?;
    for (lambda, test) in lambdas.iter().zip(&profile.points) {
        let want = spectrum.rank_at(*lambda);
        if test.verdict != Verdict::InResolvent || test.rank != want {
            return Err(Error::GapNotCertified { lambda: *lambda });
        }
    }
    let block_sizes: Vec<usize> = spectrum.intervals.iter().map(|i| i.multiplicity).collect();
    if block_sizes.iter().sum::<usize>() != n {
        return Err(Error::InvalidInput("interval multiplicities must add up to the dimension".into()));
    }
    // flag from a backward sweep over the grid extended by `pad`
    let len = grid.len();
    let h = grid[len - 1] - grid[len - 2];
    let extra = ((opts.pad / h).ceil() as usize).max(1);
    let mut ext_grid = grid.to_vec();
    ext_grid.extend((1..=extra).map(|k| grid[len - 1] + h * k as f64));
    let tail_grid = &ext_grid[len - 1..];
    let tail = SampledFlow::new(sys, tail_grid, tail_grid[0], opts.tol)?;
    let mut steps = flow.steps.clone();
    steps.extend(tail.steps);
    let ext = SampledFlow::from_steps(ext_grid, steps, 0)?;
    let inverses: Vec<Mat> = ext.steps.iter().map(linalg::inverse).collect::<Result<_>>()?;
    let mut frames = vec![Mat::zeros(n, n); ext.len()];
    sweep_frames(&ext, &inverses, ext.len() - 1, 0, random_frame(n, opts.seed), &mut frames);
    frames.truncate(len);
    let mask = block_mask(&block_sizes);
    let mut flag_defect = 0.0f64;
    let mut z = vec![Mat::identity(n, n)];
    for k in 0..len - 1 {
        let mut u = frames[k + 1].transpose() * &flow.steps[k] * &frames[k];
        let scale = linalg::norm2(&u);
        for i in 0..n {
            for j in 0..n {
                if mask[i] > mask[j] {
                    flag_defect = flag_defect.max(u[(i, j)].abs() / scale);
                    u[(i, j)] = 0.0;
                }
            }
        }
        let next = &u * &z[k];
        z.push(next);
    }
    let mut blocks = Vec::new();
    let mut o = 0;
    for &m in &block_sizes {
        blocks.push(
            frames
                .iter()
                .zip(&z)
                .map(|(q, zk)| BlockSample { basis: q.clone(), coeff: zk.columns(o, m).into_owned() })
                .collect::<Vec<_>>(),
        );
        o += m;
    }
    let (rs, ss) = assemble(&blocks, n)?;
    let mut res = finish(sys, &flow.grid, rs, ss, block_sizes, frames[0].clone(), lambdas[lambdas.len() - 1])?;
    res.flag_defect = flag_defect;
    res.stable_rank = res.block_sizes[0];
    Ok(res)
}

/// The whole fundamental matrix as a single block, via a forward QR sweep.
fn flow_fundamentals(flow: &SampledFlow) -> Result<Vec<BlockSample>> {
    let n = flow.dim();
    let mut q = Mat::identity(n, n);
    let mut g = Mat::identity(n, n);
    let mut out = vec![BlockSample { basis: q.clone(), coeff: g.clone() }];
    for m in &flow.steps {
        let z = m * &q;
        let (nq, _) = qr_positive(z.clone());
        g = nq.transpose() * z * g;
        q = nq;
        out.push(BlockSample { basis: q.clone(), coeff: g.clone() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::builtin;

    fn lin(name: &str) -> LinearSystem {
        builtin(name).unwrap().linear().clone()
    }

    #[test]
    fn zero_coefficient_is_already_reduced() {
        let sys = LinearSystem::constant("zero", Mat::zeros(2, 2));
        let grid = propagate::uniform_grid(-1.0, 1.0, 0.1, None);
        let p = linalg::canonical_projection(1, 2).unwrap();
        let res = coppel_similarity(&sys, &p, &grid, &ReduceOptions::default()).unwrap();
        assert_eq!(res.block_sizes, vec![1, 1]);
        assert!(res.s_samples.iter().all(|s| (s - Mat::identity(2, 2)).norm() < 1e-12));
        assert!(res.b_samples.iter().all(|b| b.norm() < 1e-10));
    }

    #[test]
    fn diagonal_system_keeps_its_coefficient() {
        let sys = lin("auto_diag_113");
        let grid = propagate::uniform_grid(-2.0, 2.0, 0.01, None);
        let p = ProjectionMatrix::new(
            Mat::from_diagonal(&crate::linalg::Vector::from_vec(vec![0.0, 0.0, 1.0])),
            1e-12,
        )
        .unwrap();
        let res = coppel_similarity(&sys, &p, &grid, &ReduceOptions::default()).unwrap();
        assert_eq!(res.block_sizes, vec![1, 2]);
        for s in &res.s_samples {
            assert!((s.abs() - res.basis.abs()).norm() < 1e-9);
        }
        let b = &res.b_samples[100];
        assert!((b[(0, 0)] + 1.0).abs() < 0.02 && (b[(1, 1)] - 1.0).abs() < 0.02 && (b[(2, 2)] - 1.0).abs() < 0.02);
        assert!(res.block_defect < 1e-9 && res.commutation_defect < 1e-12);
    }

    #[test]
    fn growing_projector_is_refused() {
        let sys = lin("coppel_counterexample");
        let grid = propagate::uniform_grid(0.0, 5.0, 0.05, None);
        let p = linalg::canonical_projection(1, 2).unwrap();
        assert!(matches!(
            coppel_similarity(&sys, &p, &grid, &ReduceOptions::default()),
            Err(Error::NotReducibleHere(_))
        ));
    }

    #[test]
    fn single_interval_is_one_block() {
        let sys = lin("scalar_arctan");
        let opts = ReduceOptions::default();
        let spec = spectrum::halfline_spectrum(&sys, 40.0, 8.0, &opts.spectrum).unwrap();
        let grid = propagate::uniform_grid(0.0, 5.0, 0.05, None);
        let res = spectral_block_diagonalize(&sys, &spec, &grid, &opts).unwrap();
        assert_eq!(res.block_sizes, vec![1]);
        assert!(res.similarity_residual < 0.05, "{}", res.similarity_residual);
    }
}
