use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dlab", version, about = "Transition matrices, Floquet theory, exponential dichotomies, dichotomy spectra, reduction and linearization")]
pub struct Cli {
    /// Catalog name (see `dlab catalog`) or path to a system file.
    #[arg(long, global = true)]
    pub system: Option<String>,

    /// Integration tolerance.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,

    /// Output directory; the DLAB_OUT environment variable takes precedence.
    #[arg(long, global = true, default_value = "dlab-out")]
    pub out_dir: PathBuf,

    /// Seed for random probes and frames.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Write the JSON report (both formats when neither flag is given).
    #[arg(long, global = true)]
    pub json: bool,

    /// Write the CSV table (both formats when neither flag is given).
    #[arg(long, global = true)]
    pub csv: bool,

    /// Record the wall-clock time in the manifest; reports are then no
    /// longer byte-identical between runs.
    #[arg(long, global = true)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transition matrix X(t, s) with Liouville and adjoint checks.
    Transition(TransitionArgs),
    /// Monodromy, multipliers, Floquet exponent matrix and periodic responses.
    Floquet(FloquetArgs),
    /// Dichotomy certificate on an interval, or the full-line criterion.
    Dichotomy(DichotomyArgs),
    /// Dichotomy spectrum with resolvent gaps and their ranks.
    Spectrum(SpectrumArgs),
    /// Kinematic similarity to a block-diagonal system.
    Reduce(ReduceArgs),
    /// Linearizing maps H and G of a quasilinear system at probe points.
    Linearize(LinearizeArgs),
    /// List the built-in systems.
    Catalog,
}

#[derive(Debug, Args)]
pub struct TransitionArgs {
    /// Final time (ignored when --grid is given).
    #[arg(long, allow_hyphen_values = true, required_unless_present = "grid")]
    pub t: Option<f64>,
    /// Initial time.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub s: f64,
    /// Sample X(t, s) on the grid `a:b:h`.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    /// Largest accepted Liouville and adjoint defects.
    #[arg(long, default_value_t = 1e-6)]
    pub check_tol: f64,
}

#[derive(Debug, Args)]
pub struct FloquetArgs {
    /// Number of sample times of Q(t) on [0, omega].
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Periodic forcing g(t), comma-separated component expressions in t.
    #[arg(long)]
    pub forcing: Option<String>,
}

#[derive(Debug, Args)]
pub struct DichotomyArgs {
    /// Interval of the certificate.
    #[arg(long, num_args = 2, allow_hyphen_values = true, value_names = ["A", "B"], default_values_t = [-6.0, 6.0])]
    pub interval: Vec<f64>,
    /// Projector at time 0 as rows, e.g. `0,0;0,1`; estimated from the
    /// flow when omitted.
    #[arg(long, value_parser = parse_matrix)]
    pub projector: Option<Matrix>,
    /// Grid step of the certificate.
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    /// Run the full-line test (half-line certificates, transversality, index).
    #[arg(long)]
    pub full_line: bool,
    /// Horizon of the full-line test.
    #[arg(long = "T", default_value_t = 10.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Horizon.
    #[arg(long = "T", default_value_t = 40.0)]
    pub horizon: f64,
    /// Averaging window.
    #[arg(long = "L", allow_hyphen_values = true, default_value_t = 8.0)]
    pub window: f64,
    /// Spectrum on the whole line instead of [0, T].
    #[arg(long)]
    pub full_line: bool,
    /// Check each gap with a shifted dichotomy test.
    #[arg(long)]
    pub verify: bool,
    /// Rank table on `a:b:n` (n equally spaced values); gap sample points
    /// when omitted.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_grid)]
    pub lambdas: Option<Grid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReduceMethod {
    /// Split by a dichotomy projector.
    Projector,
    /// Split along the gaps of the dichotomy spectrum (half line).
    Spectral,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long, value_enum, default_value_t = ReduceMethod::Projector)]
    pub method: ReduceMethod,
    /// Interval of the reduction grid.
    #[arg(long, num_args = 2, allow_hyphen_values = true, value_names = ["A", "B"], default_values_t = [-3.0, 3.0])]
    pub interval: Vec<f64>,
    /// Grid step.
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Projector at time 0 as rows; estimated from the flow when omitted.
    #[arg(long, value_parser = parse_matrix)]
    pub projector: Option<Matrix>,
    /// Horizon of the spectrum used by `--method spectral`.
    #[arg(long = "T", default_value_t = 40.0)]
    pub horizon: f64,
    /// Window of the spectrum used by `--method spectral`.
    #[arg(long = "L", default_value_t = 8.0)]
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapMode {
    /// Half line when the certificate projector is the identity, else full line.
    Auto,
    Half,
    Full,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    /// Probe point `t:x1,x2,...`; repeatable.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_probe)]
    pub probe: Vec<Probe>,
    /// Number of seeded random probes with t in [0, 10] and |x_i| <= 2.
    #[arg(long, default_value_t = 0)]
    pub probes: usize,
    /// Target accuracy of the maps.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = MapMode::Auto)]
    pub mode: MapMode,
    /// Interval of the dichotomy certificate of the linear part.
    #[arg(long, num_args = 2, allow_hyphen_values = true, value_names = ["A", "B"], default_values_t = [-6.0, 6.0])]
    pub interval: Vec<f64>,
    /// Also measure the conjugacy residual over this horizon.
    #[arg(long, default_value_t = 0.0)]
    pub horizon: f64,
}

/// `a:b:h` for time grids, `a:b:n` for lambda tables.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct Matrix(pub Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

fn number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    s.parse::<f64>().map_err(|_| format!("'{s}' is not a number"))
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected a:b:c, got '{s}'"));
    }
    let g = Grid { a: number(parts[0])?, b: number(parts[1])?, c: number(parts[2])? };
    if !(g.b > g.a) || !(g.c > 0.0) {
        return Err(format!("'{s}' needs a < b and a positive third entry"));
    }
    Ok(g)
}

fn parse_matrix(s: &str) -> Result<Matrix, String> {
    let rows = s
        .split(';')
        .map(|r| r.split(',').map(number).collect::<Result<Vec<f64>, String>>())
        .collect::<Result<Vec<_>, String>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(format!("'{s}' is not a square matrix"));
    }
    Ok(Matrix(rows))
}

fn parse_probe(s: &str) -> Result<Probe, String> {
    let (t, x) = s.split_once(':').ok_or_else(|| format!("expected t:x1,x2,..., got '{s}'"))?;
    Ok(Probe { t: number(t)?, x: x.split(',').map(number).collect::<Result<_, _>>()? })
}
