use dlab::dichotomy::{
    certify, contracting_projectors, estimate_splitting_on, full_line_criterion, CertificateReport, CertifyOptions,
    IndexReport, SplitOptions,
};
use dlab::expr::{self, Expr};
use dlab::floquet::{self, FloquetReport};
use dlab::linalg::{self, Mat, ProjectionMatrix, Vector};
use dlab::linearize::{self, LinearizationMode, MapEvaluation};
use dlab::propagate::{self, uniform_grid, DenseFlow, LiouvilleCheck, SampledFlow};
use dlab::reduce::{self, ReduceOptions, ReductionReport};
use dlab::spectrum::{self, ShiftedTest, SpectrumOptions, SpectrumReport};
use dlab::system::{self, Domain, LinearSystem, System};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::*;
use crate::output::{matrix_table, num, Run, SystemInfo};
use crate::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if !(cli.tol > 0.0) || !cli.tol.is_finite() {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", cli.tol)));
    }
    match &cli.command {
        Command::Transition(a) => transition(cli, a),
        Command::Floquet(a) => floquet_cmd(cli, a),
        Command::Dichotomy(a) => dichotomy(cli, a),
        Command::Spectrum(a) => spectrum_cmd(cli, a),
        Command::Reduce(a) => reduce_cmd(cli, a),
        Command::Linearize(a) => linearize_cmd(cli, a),
        Command::Catalog => catalog(cli),
    }
}

fn load(cli: &Cli, command: &str) -> Result<(System, SystemInfo), CliError> {
    let arg = cli
        .system
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{command} needs --system <name|file>")))?;
    let sys = system::load(arg)?;
    let info = SystemInfo::new(arg, sys.name(), sys.linear().source());
    Ok((sys, info))
}

fn interval(v: &[f64]) -> Result<(f64, f64), CliError> {
    let (a, b) = (v[0], v[1]);
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(CliError::Usage(format!("--interval needs A < B, got {a} {b}")));
    }
    Ok((a, b))
}

fn split_options(cli: &Cli) -> SplitOptions {
    SplitOptions { seed: cli.seed, tol: cli.tol, ..SplitOptions::default() }
}

fn certify_options(cli: &Cli) -> CertifyOptions {
    CertifyOptions { tol: cli.tol, ..CertifyOptions::default() }
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

/// Extra horizon of the splitting sweeps behind an estimated projector. The
/// sweeps align their frames over half the horizon, and the projector error
/// is amplified by the dichotomy across the whole interval.
const SPLIT_PAD: f64 = 10.0;

/// A given projector, or one estimated from the forward-bounded subspace on
/// `[0, b + pad]` and the backward-bounded subspace on `[a - pad, 0]`.
fn projector(cli: &Cli, sys: &LinearSystem, given: &Option<Matrix>, a: f64, b: f64) -> Result<ProjectionMatrix, CliError> {
    if let Some(Matrix(rows)) = given {
        if rows.len() != sys.dim() {
            return Err(CliError::Usage(format!("--projector is {0}x{0}, system dimension is {1}", rows.len(), sys.dim())));
        }
        return Ok(ProjectionMatrix::new(linalg::from_rows(rows)?, 1e-8)?);
    }
    if !(a <= 0.0 && 0.0 <= b) {
        return Err(CliError::Usage("the projector can only be estimated on intervals containing 0; pass --projector".into()));
    }
    let opts = split_options(cli);
    let n = sys.dim();
    let sweep = |pad: f64| -> Result<_, CliError> {
        let stable = if b > 0.0 { Some(estimate_splitting_on(sys, b + pad, Domain::HalfLinePlus, &opts)?) } else { None };
        let unstable = if a < 0.0 { Some(estimate_splitting_on(sys, pad - a, Domain::HalfLineMinus, &opts)?) } else { None };
        for s in stable.iter().chain(&unstable) {
            if !s.is_conclusive() {
                return Err(CliError::Numerical(format!(
                    "growth rates {:?} are too close to 0 to estimate a projector; pass --projector",
                    s.inconclusive_rates
                )));
            }
        }
        Ok((stable, unstable))
    };
    // the unpadded sweep rejects systems without a splitting before the
    // longer one is attempted
    sweep(0.0)?;
    let (stable, unstable) = sweep(SPLIT_PAD)?;
    let m = match (&stable, &unstable) {
        (Some(v), Some(w)) => return Ok(linalg::oblique_projection(&v.stable_basis, &w.unstable_basis)?),
        (Some(v), None) => &v.stable_basis * v.stable_basis.transpose(),
        (None, Some(w)) => Mat::identity(n, n) - &w.unstable_basis * w.unstable_basis.transpose(),
        (None, None) => unreachable!("a < b"),
    };
    Ok(ProjectionMatrix::new(m, 1e-8)?)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TransitionReport {
    dim: usize,
    s: f64,
    times: Vec<f64>,
    #[serde(rename = "X_final")]
    x_final: Vec<Vec<f64>>,
    err_est: Option<f64>,
    liouville: Option<LiouvilleCheck>,
    adjoint_defect: Option<f64>,
}

fn transition(cli: &Cli, args: &TransitionArgs) -> Result<(), CliError> {
    let (system, info) = load(cli, "transition")?;
    let sys = system.linear();
    let s = args.s;
    let (times, mats, err_est) = match args.grid {
        Some(g) => {
            let times = uniform_grid(g.a, g.b, g.c, None);
            let flow = DenseFlow::new(sys, g.a.min(s), g.b.max(s), s, cli.tol)?;
            let mats: Vec<Mat> = times.iter().map(|&t| flow.at(t)).collect();
            (times, mats, None)
        }
        None => {
            let t = args.t.expect("clap requires --t without --grid");
            let x = propagate::transition_matrix(sys, t, s, cli.tol)?;
            (vec![t], vec![x.x], Some(x.err_est))
        }
    };
    let t_end = *times.last().expect("nonempty");
    let (liouville, adjoint) = if t_end != s {
        let l = propagate::liouville_check(sys, s, t_end, cli.tol)?;
        let adj = propagate::adjoint_check(sys, &linspace(s.min(t_end), s.max(t_end), 51), cli.tol)?;
        (Some(l), Some(adj))
    } else {
        (None, None)
    };
    let mut run = Run::new(cli, "transition", Some(info));
    run.param("s", s).param("times", (times[0], t_end, times.len()));
    let report = TransitionReport {
        dim: sys.dim(),
        s,
        x_final: linalg::rows(mats.last().expect("nonempty")),
        times: times.clone(),
        err_est,
        liouville,
        adjoint_defect: adjoint,
    };
    let table = matrix_table(&["X"], &times, &[mats]);
    run.finish(&report, &[("", table)])?;
    if let Some(l) = liouville {
        say!("liouville rel_err = {:.3e}", l.rel_err);
        if !(l.rel_err <= args.check_tol) {
            return Err(CliError::Numerical(format!(
                "Liouville identity det X = exp(int tr A) violated: rel_err {:.3e} > {:.1e}",
                l.rel_err, args.check_tol
            )));
        }
    }
    if let Some(d) = adjoint {
        say!("adjoint defect |Y^T X - I| = {d:.3e}");
        if !(d <= args.check_tol) {
            return Err(CliError::Numerical(format!(
                "adjoint identity Y^T X = I violated: defect {d:.3e} > {:.1e}",
                args.check_tol
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct QSample {
    t: f64,
    #[serde(rename = "Q")]
    q: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct PeriodicReport {
    forcing: Vec<String>,
    x0: Vec<f64>,
    closure_defect: f64,
}

#[derive(Serialize)]
struct FloquetOut {
    floquet: FloquetReport,
    hyperbolic: bool,
    q_samples: Vec<QSample>,
    periodic_solution: Option<PeriodicReport>,
}

fn floquet_cmd(cli: &Cli, args: &FloquetArgs) -> Result<(), CliError> {
    let (system, info) = load(cli, "floquet")?;
    let sys = system.linear();
    let data = floquet::monodromy(sys, cli.tol)?;
    let times = linspace(0.0, data.omega, args.samples.max(2));
    let q = floquet::floquet_factor(sys, &data, &times, cli.tol)?;
    let (hyperbolic, _) = floquet::periodic_hyperbolic(&data, 1e-8);
    let mut tables = vec![("", matrix_table(&["Q"], &times, &[q.iter().map(|m| m.map(|z| z.re)).collect()]))];
    let periodic_solution = match &args.forcing {
        None => None,
        Some(text) => {
            let comps: Vec<String> = text.split(',').map(|s| s.trim().to_string()).collect();
            let exprs = comps.iter().map(|c| expr::parse(c)).collect::<dlab::Result<Vec<Expr>>>()?;
            if exprs.iter().any(|e| e.max_y_index() > 0) {
                return Err(CliError::Usage("--forcing may depend on t only".into()));
            }
            let g = |t: f64| Vector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(t, &[])));
            let sol = floquet::periodic_solution(sys, &g, 101, cli.tol)?;
            tables.push(("-periodic", propagate::trajectory_csv(&sol.times, &sol.states, None)));
            Some(PeriodicReport { forcing: comps, x0: sol.x0.iter().copied().collect(), closure_defect: sol.closure_defect })
        }
    };
    let out = FloquetOut {
        floquet: data.report(),
        hyperbolic,
        q_samples: times
            .iter()
            .zip(&q)
            .map(|(&t, m)| QSample { t, q: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect() })
            .collect(),
        periodic_solution,
    };
    let mut run = Run::new(cli, "floquet", Some(info));
    run.param("samples", times.len()).param("forcing", &args.forcing);
    say!("omega = {:.12}, multipliers:", data.omega);
    for z in &data.multipliers {
        say!("  {:+.12e} {:+.12e}i (|rho| = {:.12})", z.re, z.im, z.norm());
    }
    if let Some(p) = &out.periodic_solution {
        say!("periodic solution x(0) = {:?}, closure defect {:.3e}", p.x0.as_slice(), p.closure_defect);
    }
    run.finish(&out, &tables)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FullLineOut {
    horizon: f64,
    passes: bool,
    reasons: Vec<String>,
    index: IndexReport,
    angle: f64,
    plus: CertificateReport,
    minus: CertificateReport,
}

fn dichotomy(cli: &Cli, args: &DichotomyArgs) -> Result<(), CliError> {
    let (system, info) = load(cli, "dichotomy")?;
    let sys = system.linear();
    let mut run = Run::new(cli, "dichotomy", Some(info));
    if args.full_line {
        if !(args.horizon > 0.0) {
            return Err(CliError::Usage(format!("--T must be positive, got {}", args.horizon)));
        }
        let rep = full_line_criterion(sys, args.horizon, &split_options(cli), &certify_options(cli))?;
        run.param("mode", "full-line").param("T", args.horizon);
        let out = FullLineOut {
            horizon: args.horizon,
            passes: rep.passes,
            reasons: rep.reasons.clone(),
            index: rep.index.clone(),
            angle: rep.angle,
            plus: rep.plus.report(),
            minus: rep.minus.report(),
        };
        let mut table = String::from("side,K,alpha,rank,flag\n");
        for (side, c) in [("plus", &rep.plus), ("minus", &rep.minus)] {
            table.push_str(&format!("{side},{},{},{},{:?}\n", num(c.k), num(c.alpha), c.projector.rank, c.flag).to_lowercase());
        }
        say!("index {}, full-line dichotomy: {}", rep.index.index, if rep.passes { "yes" } else { "no" });
        for r in &rep.reasons {
            say!("  {r}");
        }
        return run.finish(&out, &[("", table)]);
    }
    let (a, b) = interval(&args.interval)?;
    if !(args.step > 0.0) {
        return Err(CliError::Usage(format!("--step must be positive, got {}", args.step)));
    }
    let p = projector(cli, sys, &args.projector, a, b)?;
    let grid = uniform_grid(a, b, args.step, Some(0.0));
    let cert = certify(sys, &p, (a, b), &grid, &certify_options(cli))?;
    let flow = SampledFlow::new(sys, &grid, cert.anchor, cli.tol)?;
    let projs = contracting_projectors(&flow, &p, cli.seed)?;
    let mut table = String::from("t,projector_norm,bound_K\n");
    for (t, m) in grid.iter().zip(&projs) {
        table.push_str(&format!("{},{},{}\n", num(*t), num(linalg::operator_norm_2(m)?), num(cert.k)));
    }
    run.param("interval", [a, b]).param("step", args.step).param("projector", linalg::rows(&p.matrix));
    say!("K = {:.6}, alpha = {:.6}, rank P = {}, {}", cert.k, cert.alpha, p.rank, format!("{:?}", cert.flag).to_lowercase());
    run.finish(&cert.report(), &[("", table)])
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SpectrumOut {
    spectrum: SpectrumReport,
    ranks: Vec<ShiftedTest>,
    rank_inconsistencies: Vec<String>,
}

fn spectrum_options(cli: &Cli) -> SpectrumOptions {
    SpectrumOptions { split: split_options(cli), certify: certify_options(cli), ..SpectrumOptions::default() }
}

fn spectrum_cmd(cli: &Cli, args: &SpectrumArgs) -> Result<(), CliError> {
    let (system, info) = load(cli, "spectrum")?;
    let sys = system.linear();
    let opts = spectrum_options(cli);
    let mut report = if args.full_line {
        spectrum::fullline_spectrum(sys, args.horizon, args.window, &opts)?
    } else {
        spectrum::halfline_spectrum(sys, args.horizon, args.window, &opts)?
    };
    if args.verify {
        report = spectrum::cross_verify(sys, &report, &opts)?;
    }
    let lambdas = match args.lambdas {
        Some(g) => linspace(g.a, g.b, (g.c as usize).max(2)),
        None => report.gaps.iter().map(|g| g.sample_point()).collect(),
    };
    let (ranks, rank_inconsistencies, table) = match spectrum::rank_step_function(sys, &lambdas, args.horizon, &opts) {
        Ok(p) => {
            let csv = p.to_csv();
            (p.points, p.inconsistencies, csv)
        }
        Err(e) if e.is_numerical() => {
            report.warnings.push(format!("rank table unavailable: {e}"));
            (Vec::new(), Vec::new(), String::from("lambda,verdict,rank\n"))
        }
        Err(e) => return Err(e.into()),
    };
    for iv in &report.intervals {
        let l = if iv.unbounded_left { "-inf".to_string() } else { format!("{:.6}", iv.bounds[0]) };
        let r = if iv.unbounded_right { "+inf".to_string() } else { format!("{:.6}", iv.bounds[1]) };
        say!("interval [{l}, {r}] multiplicity {}", iv.multiplicity);
    }
    for g in &report.gaps {
        say!("gap rank {}", g.rank);
    }
    for w in &report.warnings {
        warn(w);
    }
    for w in report.inconsistencies.iter().chain(&rank_inconsistencies) {
        warn(&format!("inconsistency: {w}"));
    }
    let mut run = Run::new(cli, "spectrum", Some(info));
    run.param("T", args.horizon)
        .param("L", args.window)
        .param("full_line", args.full_line)
        .param("verify", args.verify)
        .param("lambdas", &lambdas);
    run.finish(&SpectrumOut { spectrum: report, ranks, rank_inconsistencies }, &[("-ranks", table)])
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ReduceOut {
    method: &'static str,
    reduction: ReductionReport,
    stable_rank: usize,
    commutation_defect: f64,
    block_defect: f64,
    projection_defect: Option<f64>,
    flag_defect: f64,
    s_inv_bound_ratio: Option<f64>,
    subsystems: Vec<CertificateReport>,
    warnings: Vec<String>,
}

fn reduce_cmd(cli: &Cli, args: &ReduceArgs) -> Result<(), CliError> {
    let (system, info) = load(cli, "reduce")?;
    let sys = system.linear();
    let (a, b) = interval(&args.interval)?;
    if !(args.step > 0.0) {
        return Err(CliError::Usage(format!("--step must be positive, got {}", args.step)));
    }
    let grid = uniform_grid(a, b, args.step, None);
    let opts = ReduceOptions { tol: cli.tol.min(1e-12), seed: cli.seed, spectrum: spectrum_options(cli), ..ReduceOptions::default() };
    let mut run = Run::new(cli, "reduce", Some(info));
    run.param("interval", [a, b]).param("step", args.step);
    let (method, res) = match args.method {
        ReduceMethod::Projector => {
            let p = projector(cli, sys, &args.projector, a, b)?;
            run.param("projector", linalg::rows(&p.matrix));
            ("projector", reduce::coppel_similarity(sys, &p, &grid, &opts)?)
        }
        ReduceMethod::Spectral => {
            run.param("T", args.horizon).param("L", args.window);
            let spec = spectrum::halfline_spectrum(sys, args.horizon, args.window, &opts.spectrum)?;
            ("spectral", reduce::spectral_block_diagonalize(sys, &spec, &grid, &opts)?)
        }
    };
    let mut warnings = Vec::new();
    let subsystems = match reduce::subsystem_dichotomies(&res, &certify_options(cli)) {
        Ok(certs) => certs.iter().map(|c| c.report()).collect(),
        Err(e) => {
            warnings.push(format!("subsystem certificates unavailable: {e}"));
            Vec::new()
        }
    };
    for w in &warnings {
        warn(w);
    }
    say!(
        "blocks {:?}, |S| <= {:.6}, |S^-1| <= {:.6}, similarity residual {:.3e}",
        res.block_sizes,
        res.s_norm_bound,
        res.s_inv_norm_bound,
        res.similarity_residual
    );
    let table = matrix_table(&["S", "B"], &res.grid, &[res.s_samples.clone(), res.b_samples.clone()]);
    let out = ReduceOut {
        method,
        reduction: res.report(),
        stable_rank: res.stable_rank,
        commutation_defect: res.commutation_defect,
        block_defect: res.block_defect,
        projection_defect: res.projection_defect,
        flag_defect: res.flag_defect,
        s_inv_bound_ratio: res.s_inv_bound_ratio,
        subsystems,
        warnings,
    };
    run.finish(&out, &[("", table)])
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ContextReport {
    mode: LinearizationMode,
    eps: f64,
    gap_factor: f64,
    window: f64,
    #[serde(rename = "K")]
    k: f64,
    alpha: f64,
    displacement_bound: f64,
}

#[derive(Serialize)]
struct ProbeReport {
    t: f64,
    input: Vec<f64>,
    #[serde(rename = "H")]
    h: Vec<f64>,
    #[serde(rename = "G")]
    g: Vec<f64>,
    iterations: usize,
    displacement: f64,
    inverse_residual: f64,
    conjugacy_residual: Option<f64>,
}

#[derive(Serialize)]
struct LinearizeOut {
    context: ContextReport,
    certificate: CertificateReport,
    probes: Vec<ProbeReport>,
    max_inverse_residual: f64,
    max_conjugacy_residual: Option<f64>,
    max_iterations: usize,
}

fn linearize_cmd(cli: &Cli, args: &LinearizeArgs) -> Result<(), CliError> {
    let (system, info) = load(cli, "linearize")?;
    let q = system
        .quasilinear()
        .ok_or_else(|| CliError::Usage(format!("'{}' has no perturbation; linearize needs a quasilinear system", system.name())))?;
    let n = q.dim();
    let (a, b) = interval(&args.interval)?;
    if !(args.eps > 0.0) {
        return Err(CliError::Usage(format!("--eps must be positive, got {}", args.eps)));
    }
    let mut probes: Vec<Probe> = args.probe.clone();
    if let Some(p) = probes.iter().find(|p| p.x.len() != n) {
        return Err(CliError::Usage(format!("probe at t = {} has {} components, system dimension is {n}", p.t, p.x.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    for _ in 0..args.probes {
        let t = rng.random_range(0.0..10.0);
        probes.push(Probe { t, x: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() });
    }
    if probes.is_empty() {
        return Err(CliError::Usage("give at least one --probe or --probes N".into()));
    }

    let grid = uniform_grid(a, b, 0.1, Some(0.0));
    let copts = certify_options(cli);
    let identity = ProjectionMatrix::new(Mat::identity(n, n), 1e-12)?;
    let (mode, cert) = match args.mode {
        MapMode::Half => (LinearizationMode::HalfLinePlus, certify(&q.linear, &identity, (a, b), &grid, &copts)?),
        MapMode::Full => {
            let p = projector(cli, &q.linear, &None, a, b)?;
            (LinearizationMode::FullLine, certify(&q.linear, &p, (a, b), &grid, &copts)?)
        }
        MapMode::Auto => {
            let c = certify(&q.linear, &identity, (a, b), &grid, &copts)?;
            if c.is_verified() {
                (LinearizationMode::HalfLinePlus, c)
            } else {
                let p = projector(cli, &q.linear, &None, a, b)?;
                (LinearizationMode::FullLine, certify(&q.linear, &p, (a, b), &grid, &copts)?)
            }
        }
    };
    let ctx = linearize::make_context(q, &cert, args.eps, mode)?;

    let mut reports = Vec::new();
    let mut h_evals: Vec<MapEvaluation> = Vec::new();
    let mut g_evals: Vec<MapEvaluation> = Vec::new();
    for p in &probes {
        let h = linearize::eval_h(&ctx, p.t, &p.x)?;
        let g = linearize::eval_g(&ctx, p.t, &p.x)?;
        let inverse_residual = linearize::inverse_residual(&ctx, p.t, &p.x)?;
        let conjugacy_residual =
            if args.horizon > 0.0 { Some(linearize::conjugacy_residual(&ctx, p.t, &p.x, args.horizon)?) } else { None };
        reports.push(ProbeReport {
            t: p.t,
            input: p.x.clone(),
            h: h.output.clone(),
            g: g.output.clone(),
            iterations: h.iterations,
            displacement: h.displacement(),
            inverse_residual,
            conjugacy_residual,
        });
        h_evals.push(h);
        g_evals.push(g);
    }
    let max_inverse_residual = reports.iter().map(|r| r.inverse_residual).fold(0.0, f64::max);
    let max_conjugacy_residual = reports.iter().filter_map(|r| r.conjugacy_residual).reduce(f64::max);
    let max_iterations = reports.iter().map(|r| r.iterations).max().unwrap_or(0);
    say!("{:>12} {:>12} {:>12} {:>6} {:>12}", "t", "|x|", "|H - x|", "iter", "inverse");
    for r in &reports {
        let norm = r.input.iter().map(|v| v * v).sum::<f64>().sqrt();
        say!("{:>12.6} {:>12.6} {:>12.3e} {:>6} {:>12.3e}", r.t, norm, r.displacement, r.iterations, r.inverse_residual);
    }
    say!("gap factor q = {:.4}, window L = {:.4}, max inverse residual {max_inverse_residual:.3e}", ctx.gap_factor, ctx.window);

    let out = LinearizeOut {
        context: ContextReport {
            mode,
            eps: args.eps,
            gap_factor: ctx.gap_factor,
            window: ctx.window,
            k: cert.k,
            alpha: cert.alpha,
            displacement_bound: ctx.displacement_bound(),
        },
        certificate: cert.report(),
        probes: reports,
        max_inverse_residual,
        max_conjugacy_residual,
        max_iterations,
    };
    let mut run = Run::new(cli, "linearize", Some(info));
    run.param("eps", args.eps).param("interval", [a, b]).param("mode", mode).param("horizon", args.horizon).param("probes", probes.len());
    run.finish(&out, &[("", linearize::batch_csv(&h_evals)), ("-inverse", linearize::batch_csv(&g_evals))])
}

// ---------------------------------------------------------------------------

fn catalog(cli: &Cli) -> Result<(), CliError> {
    let entries = system::catalog();
    let mut table = String::from("name,kind,dim,domain,period\n");
    for e in &entries {
        table.push_str(&format!("{},{},{},{},{}\n", e.name, e.kind, e.dim, e.domain, e.period.unwrap_or("")));
        say!("{:<24} {:<12} n={}  {}", e.name, e.kind, e.dim, e.description);
    }
    Run::new(cli, "catalog", None).finish(&entries, &[("", table)])
}
