//! Linear and quasilinear systems: construction, the built-in catalog and
//! the configuration-file format.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::linalg::{self, Mat, Vector};

pub type CoeffFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;
pub type MatFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;
pub type PerturbationFn = Arc<dyn Fn(f64, &[f64]) -> Vector + Send + Sync>;

/// Allowed periodicity defect `|A(t + omega) - A(t)|`.
pub const PERIOD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    FullLine,
    HalfLinePlus,
    HalfLineMinus,
}

impl Domain {
    pub fn contains(self, t: f64) -> bool {
        match self {
            Domain::FullLine => t.is_finite(),
            Domain::HalfLinePlus => t >= 0.0 && t.is_finite(),
            Domain::HalfLineMinus => t <= 0.0 && t.is_finite(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::FullLine => "full-line",
            Domain::HalfLinePlus => "half-line-plus",
            Domain::HalfLineMinus => "half-line-minus",
        }
    }

    pub fn reversed(self) -> Domain {
        match self {
            Domain::FullLine => Domain::FullLine,
            Domain::HalfLinePlus => Domain::HalfLineMinus,
            Domain::HalfLineMinus => Domain::HalfLinePlus,
        }
    }

    fn parse(s: &str) -> Option<Domain> {
        match s {
            "full" | "full-line" | "R" => Some(Domain::FullLine),
            "half+" | "half-line-plus" | "R+" => Some(Domain::HalfLinePlus),
            "half-" | "half-line-minus" | "R-" => Some(Domain::HalfLineMinus),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A change of variables `x = Q(t) y` applied to a base system. The
/// conjugated coefficient is `Q^{-1}(A Q - Q')` and its transition matrix
/// is `Q(t)^{-1} X(t,s) Q(s)`, which propagation uses directly.
#[derive(Clone)]
pub struct Conjugation {
    pub base: LinearSystem,
    pub q: MatFn,
    pub q_inv: MatFn,
    pub q_dot: MatFn,
}

/// `x' = A(t) x` on a domain, optionally `omega`-periodic.
#[derive(Clone)]
pub struct LinearSystem {
    name: String,
    dim: usize,
    domain: Domain,
    period: Option<f64>,
    coeff: CoeffFn,
    conjugation: Option<Arc<Conjugation>>,
    source: String,
}

impl fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("period", &self.period)
            .field("conjugated", &self.conjugation.is_some())
            .finish()
    }
}

impl LinearSystem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        domain: Domain,
        coeff: impl Fn(f64) -> Mat + Send + Sync + 'static,
    ) -> Self {
        let name = name.into();
        let source = format!("fn:{name}");
        Self { name, dim, domain, period: None, coeff: Arc::new(coeff), conjugation: None, source }
    }

    /// Constant coefficient `A` on the full line.
    pub fn constant(name: impl Into<String>, a: Mat) -> Self {
        assert!(a.is_square(), "coefficient must be square");
        let dim = a.nrows();
        let mut sys = Self::new(name, dim, Domain::FullLine, move |_| a.clone());
        sys.source = format!("const:{}:{:?}", sys.name, linalg::rows(&sys.coeff_unchecked(0.0)));
        sys
    }

    /// Scalar equation `x' = a(t) x` on the full line.
    pub fn scalar(name: impl Into<String>, a: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(name, 1, Domain::FullLine, move |t| Mat::from_element(1, 1, a(t)))
    }

    pub fn with_period(mut self, omega: f64) -> Self {
        self.period = Some(omega);
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub(crate) fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Text identifying how the system was built; hashed into run manifests.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn conjugation(&self) -> Option<&Conjugation> {
        self.conjugation.as_deref()
    }

    /// `A(t)`, refusing times outside the domain.
    pub fn eval_coeff(&self, t: f64) -> Result<Mat> {
        if !self.domain.contains(t) {
            return Err(Error::Domain { t, domain: self.domain.name().into() });
        }
        Ok(self.coeff_unchecked(t))
    }

    pub fn coeff_unchecked(&self, t: f64) -> Mat {
        (self.coeff)(t)
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if self.domain.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain { t, domain: self.domain.name().into() })
        }
    }

    /// `A(t) - lambda I`.
    pub fn shifted(&self, lambda: f64) -> LinearSystem {
        let name = format!("{}-shift({lambda})", self.name);
        if let Some(c) = &self.conjugation {
            let base = c.base.shifted(lambda);
            return conjugate_with(&base, c.q.clone(), c.q_inv.clone(), c.q_dot.clone())
                .with_name(name)
                .with_period_opt(self.period);
        }
        let n = self.dim;
        let coeff = self.coeff.clone();
        LinearSystem {
            name,
            dim: n,
            domain: self.domain,
            period: self.period,
            coeff: Arc::new(move |t| coeff(t) - Mat::identity(n, n) * lambda),
            conjugation: None,
            source: format!("{}|shift({lambda:?})", self.source),
        }
    }

    /// Time reversal `t -> -t`: `B(t) = -A(-t)`, with `Y(t,s) = X(-t,-s)`.
    pub fn reversed(&self) -> LinearSystem {
        let name = format!("{}-reversed", self.name);
        if let Some(c) = &self.conjugation {
            let base = c.base.reversed();
            let (q, qi, qd) = (c.q.clone(), c.q_inv.clone(), c.q_dot.clone());
            return conjugate_with(
                &base,
                Arc::new(move |t| q(-t)),
                Arc::new(move |t| qi(-t)),
                Arc::new(move |t| -qd(-t)),
            )
            .with_name(name)
            .with_period_opt(self.period);
        }
        let coeff = self.coeff.clone();
        LinearSystem {
            name,
            dim: self.dim,
            domain: self.domain.reversed(),
            period: self.period,
            coeff: Arc::new(move |t| -coeff(-t)),
            conjugation: None,
            source: format!("{}|reversed", self.source),
        }
    }

    fn with_period_opt(mut self, p: Option<f64>) -> Self {
        self.period = p;
        self
    }

    /// Largest `|A(t)|_2` over `samples + 1` equispaced points of `[a, b]`.
    pub fn sampled_sup_norm(&self, a: f64, b: f64, samples: usize) -> f64 {
        let samples = samples.max(1);
        (0..=samples)
            .map(|k| a + (b - a) * k as f64 / samples as f64)
            .map(|t| linalg::norm2(&self.coeff_unchecked(t)))
            .fold(0.0, f64::max)
    }

    /// Largest periodicity defect over `samples` points in `[0, omega)`.
    pub fn periodicity_defect(&self, samples: usize) -> Option<f64> {
        let omega = self.period?;
        let mut worst = 0.0f64;
        for k in 0..samples {
            let t = -omega + 3.0 * omega * k as f64 / samples as f64;
            if !self.domain.contains(t) || !self.domain.contains(t + omega) {
                continue;
            }
            let d = linalg::norm2(&(self.coeff_unchecked(t + omega) - self.coeff_unchecked(t)));
            worst = worst.max(d);
        }
        Some(worst)
    }
}

/// The system `y' = Q^{-1}(A Q - Q') y` obtained from `x = Q(t) y`.
pub fn conjugate_with(base: &LinearSystem, q: MatFn, q_inv: MatFn, q_dot: MatFn) -> LinearSystem {
    let (bq, bqi, bqd) = (q.clone(), q_inv.clone(), q_dot.clone());
    let bcoeff = base.coeff.clone();
    let coeff: CoeffFn = Arc::new(move |t| {
        let qt = bq(t);
        bqi(t) * (bcoeff(t) * &qt - bqd(t))
    });
    LinearSystem {
        name: format!("{}-conjugated", base.name),
        dim: base.dim,
        domain: base.domain,
        period: None,
        coeff,
        conjugation: Some(Arc::new(Conjugation { base: base.clone(), q, q_inv, q_dot })),
        source: format!("{}|conjugated", base.source),
    }
}

/// Conjugation by the orthogonal fundamental matrix of `antisym_exp`,
/// `Q(t) = [[cos e^t, sin e^t], [-sin e^t, cos e^t]]`.
pub fn conjugate_by_antisym_exp(base: &LinearSystem) -> Result<LinearSystem> {
    if base.dim != 2 {
        return Err(Error::Shape(format!("antisym_exp conjugation needs n = 2, got {}", base.dim)));
    }
    let q: MatFn = Arc::new(|t: f64| linalg::rotation(-t.exp()));
    let q_inv: MatFn = Arc::new(|t: f64| linalg::rotation(t.exp()));
    let q_dot: MatFn = Arc::new(|t: f64| {
        let e = t.exp();
        let (s, c) = e.sin_cos();
        Mat::from_row_slice(2, 2, &[-s * e, c * e, -c * e, -s * e])
    });
    Ok(conjugate_with(base, q, q_inv, q_dot))
}

/// Outcome of sampling a perturbation against its declared constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub samples: usize,
    pub max_abs: f64,
    pub max_lipschitz_quotient: f64,
    pub mu_ok: bool,
    pub gamma_ok: bool,
}

/// `y' = A(t) y + f(t, y)` with declared `|f| <= mu` and Lipschitz
/// constant `gamma`.
#[derive(Clone)]
pub struct QuasilinearSystem {
    pub linear: LinearSystem,
    f: PerturbationFn,
    pub mu: f64,
    pub gamma: f64,
    f_text: Option<Vec<String>>,
    check: Option<PerturbationCheck>,
}

impl fmt::Debug for QuasilinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuasilinearSystem")
            .field("linear", &self.linear)
            .field("mu", &self.mu)
            .field("gamma", &self.gamma)
            .field("f", &self.f_text)
            .finish()
    }
}

impl QuasilinearSystem {
    /// Builds the system and samples the declared constants with a fixed
    /// seed. A failed sample only sets flags in [`Self::check`].
    pub fn new(
        linear: LinearSystem,
        f: impl Fn(f64, &[f64]) -> Vector + Send + Sync + 'static,
        mu: f64,
        gamma: f64,
    ) -> Result<Self> {
        if !(mu >= 0.0 && gamma >= 0.0 && mu.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("mu and gamma must be finite and nonnegative (mu={mu}, gamma={gamma})")));
        }
        let mut sys = Self { linear, f: Arc::new(f), mu, gamma, f_text: None, check: None };
        sys.check = Some(sys.validate(0, 2000));
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.linear.dim()
    }

    pub fn name(&self) -> &str {
        self.linear.name()
    }

    pub fn f(&self, t: f64, y: &[f64]) -> Vector {
        (self.f)(t, y)
    }

    pub fn perturbation(&self) -> PerturbationFn {
        self.f.clone()
    }

    pub fn check(&self) -> Option<&PerturbationCheck> {
        self.check.as_ref()
    }

    pub fn perturbation_text(&self) -> Option<&[String]> {
        self.f_text.as_deref()
    }

    /// Same linear part and perturbation with a different declared `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut s = self.clone();
        s.gamma = gamma;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be finite and nonnegative, got {gamma}")));
        }
        s.check = Some(s.validate(0, 2000));
        Ok(s)
    }

    /// Random probes of `|f|` and of difference quotients. Times are drawn
    /// from `[-20, 20]` intersected with the domain, states from a box of
    /// half-width 10.
    pub fn validate(&self, seed: u64, samples: usize) -> PerturbationCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let (lo, hi) = match self.linear.domain() {
            Domain::FullLine => (-20.0, 20.0),
            Domain::HalfLinePlus => (0.0, 20.0),
            Domain::HalfLineMinus => (-20.0, 0.0),
        };
        let mut max_abs = 0.0f64;
        let mut max_q = 0.0f64;
        for _ in 0..samples {
            let t = rng.random_range(lo..=hi);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let scale = 10f64.powf(rng.random_range(-4.0..0.5));
            let z: Vec<f64> = y.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
            let fy = self.f(t, &y);
            let fz = self.f(t, &z);
            max_abs = max_abs.max(fy.norm());
            let dy = Vector::from_iterator(n, y.iter().zip(&z).map(|(a, b)| a - b)).norm();
            if dy > 0.0 {
                max_q = max_q.max((fy - fz).norm() / dy);
            }
        }
        PerturbationCheck {
            samples,
            max_abs,
            max_lipschitz_quotient: max_q,
            mu_ok: max_abs <= self.mu * (1.0 + 1e-12) + 1e-300,
            gamma_ok: max_q <= self.gamma * 1.05 + 1e-300,
        }
    }

    /// `D_y f(t, y)` by central differences.
    pub fn jacobian_f(&self, t: f64, y: &[f64]) -> Mat {
        let n = self.dim();
        let mut jac = Mat::zeros(n, n);
        let mut yp = y.to_vec();
        for j in 0..n {
            let h = 1e-6 * y[j].abs().max(1.0);
            yp[j] = y[j] + h;
            let fp = self.f(t, &yp);
            yp[j] = y[j] - h;
            let fm = self.f(t, &yp);
            yp[j] = y[j];
            jac.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        jac
    }
}

/// A parsed or built-in system.
#[derive(Debug, Clone)]
pub enum System {
    Linear(LinearSystem),
    Quasilinear(QuasilinearSystem),
}

impl System {
    pub fn linear(&self) -> &LinearSystem {
        match self {
            System::Linear(s) => s,
            System::Quasilinear(q) => &q.linear,
        }
    }

    pub fn quasilinear(&self) -> Option<&QuasilinearSystem> {
        match self {
            System::Quasilinear(q) => Some(q),
            System::Linear(_) => None,
        }
    }

    pub fn name(&self) -> &str {
        self.linear().name()
    }
}

/// One line of the catalog listing.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: &'static str,
    pub dim: usize,
    pub domain: Domain,
    pub period: Option<&'static str>,
    pub description: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    use Domain::FullLine;
    vec![
        CatalogEntry { name: "markus_yamabe", kind: "linear", dim: 2, domain: FullLine, period: Some("pi"),
            description: "Markus-Yamabe system: eigenvalues of A(t) have real part -1/4 but X(t) has a solution growing like e^(t/2)" },
        CatalogEntry { name: "antisym_exp", kind: "linear", dim: 2, domain: FullLine, period: None,
            description: "A(t) = [[0, e^t], [-e^t, 0]]; antisymmetric, X(t) = rotation by -e^t is orthogonal" },
        CatalogEntry { name: "scalar_arctan", kind: "linear", dim: 1, domain: FullLine, period: None,
            description: "a(t) = 1/(1+t^2); X(t) = e^(arctan t) is bounded, spectrum {0}" },
        CatalogEntry { name: "scalar_linear_t", kind: "linear", dim: 1, domain: FullLine, period: None,
            description: "a(t) = t; unbounded coefficient, spectrum is the whole real line" },
        CatalogEntry { name: "auto_diag_113", kind: "linear", dim: 3, domain: FullLine, period: None,
            description: "constant A = diag(1, 1, -1); spectrum {-1, 1} with gap ranks 0, 1, 3" },
        CatalogEntry { name: "coppel_counterexample", kind: "linear", dim: 2, domain: FullLine, period: None,
            description: "A(t) = [[-1, e^(2t)], [0, 1]]; no bounded growth and |X(t) P X^-1(t)| unbounded for P = diag(1, 0)" },
        CatalogEntry { name: "periodic_scalar(c)", kind: "linear", dim: 1, domain: FullLine, period: Some("2*pi"),
            description: "a(t) = c + cos t (default c = 0.3); Floquet exponent c, Q(t) = e^(sin t)" },
        CatalogEntry { name: "palmer_demo", kind: "quasilinear", dim: 1, domain: FullLine, period: None,
            description: "y' = -y + 0.1 sin y with mu = gamma = 0.1; gap factor 2K gamma/alpha = 0.2" },
        CatalogEntry { name: "palmer_tanh", kind: "linear", dim: 1, domain: FullLine, period: None,
            description: "a(t) = -tanh t; dichotomies on both half-lines with index 1, none on the full line" },
        CatalogEntry { name: "rotation_generator", kind: "linear", dim: 2, domain: FullLine, period: Some("2*pi"),
            description: "constant A = [[0, 1], [-1, 0]] with period 2*pi; monodromy I, all multipliers on the unit circle" },
        CatalogEntry { name: "scalar_decay", kind: "linear", dim: 1, domain: FullLine, period: Some("2*pi"),
            description: "a(t) = -1 viewed with period 2*pi; target of the forced example x' = -x + cos t" },
    ]
}

pub fn markus_yamabe() -> LinearSystem {
    LinearSystem::new("markus_yamabe", 2, Domain::FullLine, |t: f64| {
        let (s, c) = t.sin_cos();
        Mat::from_row_slice(2, 2, &[-1.0 + 1.5 * c * c, 1.0 - 1.5 * c * s, -1.0 - 1.5 * c * s, -1.0 + 1.5 * s * s])
    })
    .with_period(PI)
    .with_source("builtin:markus_yamabe")
}

pub fn antisym_exp() -> LinearSystem {
    LinearSystem::new("antisym_exp", 2, Domain::FullLine, |t: f64| {
        let e = t.exp();
        Mat::from_row_slice(2, 2, &[0.0, e, -e, 0.0])
    })
    .with_source("builtin:antisym_exp")
}

pub fn periodic_scalar(c: f64) -> LinearSystem {
    LinearSystem::scalar(format!("periodic_scalar({c})"), move |t| c + t.cos())
        .with_period(2.0 * PI)
        .with_source(format!("builtin:periodic_scalar({c:?})"))
}

pub fn palmer_demo() -> QuasilinearSystem {
    let linear = LinearSystem::constant("palmer_demo", Mat::from_element(1, 1, -1.0)).with_source("builtin:palmer_demo");
    let mut q = QuasilinearSystem::new(linear, |_t, y| Vector::from_element(1, 0.1 * y[0].sin()), 0.1, 0.1)
        .expect("constants are valid");
    q.f_text = Some(vec!["0.1*sin(y1)".into()]);
    q
}

/// Looks up a catalog entry. `periodic_scalar` accepts an optional
/// parenthesized constant, as in `periodic_scalar(0.3)`.
pub fn builtin(name: &str) -> Result<System> {
    let name = name.trim();
    if let Some(rest) = name.strip_prefix("periodic_scalar") {
        let c = if rest.is_empty() {
            0.3
        } else if let Some(arg) = rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            expr::parse_constant(arg, 1, "periodic_scalar(".len() + 1)?
        } else {
            return Err(Error::NotInCatalog(name.into()));
        };
        return Ok(System::Linear(periodic_scalar(c)));
    }
    let sys = match name {
        "markus_yamabe" => markus_yamabe(),
        "antisym_exp" => antisym_exp(),
        "scalar_arctan" => LinearSystem::scalar("scalar_arctan", |t| 1.0 / (1.0 + t * t)),
        "scalar_linear_t" => LinearSystem::scalar("scalar_linear_t", |t| t),
        "auto_diag_113" => {
            LinearSystem::constant("auto_diag_113", Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, -1.0])))
        }
        "coppel_counterexample" => LinearSystem::new("coppel_counterexample", 2, Domain::FullLine, |t: f64| {
            Mat::from_row_slice(2, 2, &[-1.0, (2.0 * t).exp(), 0.0, 1.0])
        }),
        "palmer_demo" => return Ok(System::Quasilinear(palmer_demo())),
        "palmer_tanh" => LinearSystem::scalar("palmer_tanh", |t| -t.tanh()),
        "rotation_generator" => {
            LinearSystem::constant("rotation_generator", Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
                .with_period(2.0 * PI)
        }
        "scalar_decay" => LinearSystem::constant("scalar_decay", Mat::from_element(1, 1, -1.0)).with_period(2.0 * PI),
        _ => return Err(Error::NotInCatalog(name.into())),
    };
    let source = format!("builtin:{name}");
    Ok(System::Linear(sys.with_source(source)))
}

/// Resolves a catalog name, or failing that reads a configuration file.
pub fn load(name_or_path: &str) -> Result<System> {
    match builtin(name_or_path) {
        Err(Error::NotInCatalog(_)) if std::path::Path::new(name_or_path).is_file() => {
            let text = std::fs::read_to_string(name_or_path)
                .map_err(|e| Error::InvalidInput(format!("cannot read {name_or_path}: {e}")))?;
            parse_system(&text)
        }
        other => other,
    }
}

struct Field {
    value: String,
    line: usize,
    col: usize,
}

/// Parses the configuration format:
///
/// ```text
/// [system]
/// name = antisym
/// dim = 2
/// domain = full          # full | half+ | half-
/// period = 2*pi          # optional
/// A = 0, exp(t); -exp(t), 0
///
/// [perturbation]          # optional
/// f = 0.1*sin(y1)         # comma-separated components
/// mu = 0.1
/// gamma = 0.1
/// ```
pub fn parse_system(text: &str) -> Result<System> {
    let mut section = "system".to_string();
    let mut sys_fields: Vec<(String, Field)> = Vec::new();
    let mut pert_fields: Vec<(String, Field)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        if let Some(inner) = trimmed.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']') else {
                return Err(Error::Parse { line: line_no, column: indent + 1, message: "unterminated section header".into() });
            };
            let name = name.trim();
            if name != "system" && name != "perturbation" {
                return Err(Error::Parse { line: line_no, column: indent + 2, message: format!("unknown section '{name}'") });
            }
            section = name.to_string();
            continue;
        }
        let Some(eq) = content.find('=') else {
            return Err(Error::Parse { line: line_no, column: indent + 1, message: "expected 'key = value'".into() });
        };
        let key = content[..eq].trim().to_string();
        let rest = &content[eq + 1..];
        let lead = rest.len() - rest.trim_start().len();
        let field = Field { value: rest.trim().to_string(), line: line_no, col: eq + 2 + lead };
        let (allowed, target): (&[&str], &mut Vec<(String, Field)>) = if section == "system" {
            (&["name", "dim", "domain", "period", "A"], &mut sys_fields)
        } else {
            (&["f", "mu", "gamma"], &mut pert_fields)
        };
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Parse { line: line_no, column: indent + 1, message: format!("unknown key '{key}' in [{section}]") });
        }
        if target.iter().any(|(k, _)| *k == key) {
            return Err(Error::Parse { line: line_no, column: indent + 1, message: format!("duplicate key '{key}'") });
        }
        target.push((key, field));
    }
    fn get<'a>(fields: &'a [(String, Field)], k: &str) -> Option<&'a Field> {
        fields.iter().find(|(key, _)| key == k).map(|(_, f)| f)
    }
    let last_line = text.lines().count().max(1);

    let name = get(&sys_fields, "name").map_or_else(|| "config".to_string(), |f| f.value.clone());
    let a_field = get(&sys_fields, "A")
        .ok_or(Error::Parse { line: last_line, column: 1, message: "missing key 'A'".into() })?;
    let rows = parse_matrix_entries(a_field)?;
    let dim = match get(&sys_fields, "dim") {
        Some(f) => f.value.parse::<usize>().ok().filter(|&d| d > 0).ok_or(Error::Parse {
            line: f.line,
            column: f.col,
            message: format!("dim must be a positive integer, got '{}'", f.value),
        })?,
        None => rows.len(),
    };
    if rows.len() != dim {
        return Err(Error::Shape(format!("declared dim {dim} but A has {} rows", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Shape(format!("declared dim {dim} but row {} of A has {} entries", i + 1, row.len())));
        }
    }
    let domain = match get(&sys_fields, "domain") {
        Some(f) => Domain::parse(&f.value).ok_or(Error::Parse {
            line: f.line,
            column: f.col,
            message: format!("unknown domain '{}'", f.value),
        })?,
        None => Domain::FullLine,
    };
    let period = match get(&sys_fields, "period") {
        Some(f) => {
            let p = expr::parse_constant(&f.value, f.line, f.col)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidInput(format!("period must be positive, got {p}")));
            }
            Some(p)
        }
        None => None,
    };
    let entries: Vec<Expr> = rows.into_iter().flatten().collect();
    let coeff_entries = entries.clone();
    let mut linear = LinearSystem::new(name, dim, domain, move |t| {
        Mat::from_row_iterator(dim, dim, coeff_entries.iter().map(|e| e.eval(t, &[])))
    })
    .with_source(format!("config:{text}"));
    if let Some(p) = period {
        linear = linear.with_period(p);
        let defect = linear.periodicity_defect(200).unwrap_or(0.0);
        if defect > PERIOD_TOL * (1.0 + linear.sampled_sup_norm(0.0, p, 50)) {
            return Err(Error::InvalidInput(format!("A(t) is not periodic with period {p} (defect {defect:e})")));
        }
    }

    if pert_fields.is_empty() {
        return Ok(System::Linear(linear));
    }
    let f_field = get(&pert_fields, "f")
        .ok_or(Error::Parse { line: last_line, column: 1, message: "missing key 'f' in [perturbation]".into() })?;
    let mut comps = Vec::new();
    let mut texts = Vec::new();
    let mut offset = 0;
    for piece in f_field.value.split(',') {
        let lead = piece.len() - piece.trim_start().len();
        let e = expr::parse_at(piece.trim(), f_field.line, f_field.col + offset + lead)?;
        if e.max_y_index() > dim {
            return Err(Error::Parse {
                line: f_field.line,
                column: f_field.col + offset + lead,
                message: format!("state variable y{} exceeds dim {dim}", e.max_y_index()),
            });
        }
        texts.push(piece.trim().to_string());
        comps.push(e);
        offset += piece.len() + 1;
    }
    if comps.len() != dim {
        return Err(Error::Shape(format!("declared dim {dim} but f has {} components", comps.len())));
    }
    let constant = |k: &str| -> Result<f64> {
        let f = get(&pert_fields, k)
            .ok_or(Error::Parse { line: last_line, column: 1, message: format!("missing key '{k}' in [perturbation]") })?;
        expr::parse_constant(&f.value, f.line, f.col)
    };
    let mu = constant("mu")?;
    let gamma = constant("gamma")?;
    let mut q = QuasilinearSystem::new(
        linear,
        move |t, y| Vector::from_iterator(comps.len(), comps.iter().map(|e| e.eval(t, y))),
        mu,
        gamma,
    )?;
    q.f_text = Some(texts);
    Ok(System::Quasilinear(q))
}

fn parse_matrix_entries(field: &Field) -> Result<Vec<Vec<Expr>>> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for row_text in field.value.split(';') {
        let mut row = Vec::new();
        let mut inner = 0;
        for entry in row_text.split(',') {
            let lead = entry.len() - entry.trim_start().len();
            let col = field.col + offset + inner + lead;
            let e = expr::parse_at(entry.trim(), field.line, col)?;
            if e.max_y_index() > 0 {
                return Err(Error::Parse {
                    line: field.line,
                    column: col,
                    message: "coefficient entries may depend on t only".into(),
                });
            }
            row.push(e);
            inner += entry.len() + 1;
        }
        rows.push(row);
        offset += row_text.len() + 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_scalar_arctan_config() {
        let sys = parse_system("# first example\n[system]\nname = arctan\ndim = 1\nA = 1/(1+t^2)\n").unwrap();
        let a = sys.linear().eval_coeff(0.0).unwrap();
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(sys.linear().name(), "arctan");
    }

    #[test]
    fn parse_antisym_config() {
        let sys = parse_system("[system]\ndim = 2\nA = 0, exp(t); -exp(t), 0\n").unwrap();
        let a = sys.linear().eval_coeff(0.0).unwrap();
        assert_eq!(a, Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn parse_shape_error() {
        let err = parse_system("[system]\ndim = 2\nA = 1, 2, 3; 4, 5, 6\n").unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn parse_unknown_function_reports_position() {
        let err = parse_system("[system]\ndim = 1\nA = foo(t)\n").unwrap_err();
        assert_eq!(err, Error::Parse { line: 3, column: 5, message: "unknown function 'foo'".into() });
    }

    #[test]
    fn parse_perturbation() {
        let text = "[system]\ndim = 1\nA = -1\n[perturbation]\nf = 0.1*sin(y1)\nmu = 0.1\ngamma = 0.1\n";
        let sys = parse_system(text).unwrap();
        let q = sys.quasilinear().unwrap();
        assert!((q.f(0.0, &[PI / 2.0])[0] - 0.1).abs() < 1e-15);
        let check = q.check().unwrap();
        assert!(check.mu_ok && check.gamma_ok);
    }

    #[test]
    fn parse_rejects_bad_period() {
        let err = parse_system("[system]\ndim = 1\nperiod = 1\nA = cos(t)\n").unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(parse_system("[system]\ndim = 1\nperiod = 2*pi\nA = cos(t)\n").is_ok());
    }

    #[test]
    fn catalog_examples() {
        let my = builtin("markus_yamabe").unwrap();
        let a0 = my.linear().eval_coeff(0.0).unwrap();
        assert!((a0 - Mat::from_row_slice(2, 2, &[0.5, 1.0, -1.0, -1.0])).abs().max() < 1e-15);
        let a = my.linear().eval_coeff(PI / 2.0).unwrap();
        assert!((a - Mat::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, 0.5])).abs().max() < 1e-15);

        let d = builtin("auto_diag_113").unwrap();
        for t in [-3.0, 0.0, 11.5] {
            assert_eq!(d.linear().eval_coeff(t).unwrap(), Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, -1.0])));
        }
        assert_eq!(builtin("scalar_arctan").unwrap().linear().eval_coeff(0.0).unwrap()[(0, 0)], 1.0);
        assert!(matches!(builtin("nope"), Err(Error::NotInCatalog(_))));
        assert!(catalog().len() >= 8);
        for entry in catalog() {
            let name = entry.name.replace("(c)", "");
            let sys = builtin(&name).unwrap();
            assert_eq!(sys.linear().dim(), entry.dim, "{name}");
        }
    }

    #[test]
    fn periodic_scalar_argument() {
        let s = builtin("periodic_scalar(0.5)").unwrap();
        assert_eq!(s.linear().eval_coeff(0.0).unwrap()[(0, 0)], 1.5);
        assert!(builtin("periodic_scalar[0.5]").is_err());
    }

    #[test]
    fn domain_errors() {
        let sys = LinearSystem::scalar("x", |_| 1.0).with_domain(Domain::HalfLinePlus);
        assert!(matches!(sys.eval_coeff(-1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn shift_and_reverse() {
        let my = markus_yamabe();
        let s = my.shifted(0.7);
        let d = my.coeff_unchecked(1.3) - s.coeff_unchecked(1.3);
        assert!((d - Mat::identity(2, 2) * 0.7).abs().max() < 1e-15);
        let r = my.reversed();
        assert_eq!(r.coeff_unchecked(0.4), -my.coeff_unchecked(-0.4));
    }

    #[test]
    fn conjugated_coefficient_matches_formula() {
        // conjugating antisym_exp by its own fundamental matrix gives B = 0
        let c = conjugate_by_antisym_exp(&antisym_exp()).unwrap();
        for t in [-1.0, 0.0, 0.5, 2.0] {
            assert!(c.coeff_unchecked(t).abs().max() < 1e-12 * t.exp().max(1.0));
        }
    }

    #[test]
    fn jacobian_of_perturbation() {
        let q = palmer_demo();
        let j = q.jacobian_f(0.0, &[0.3]);
        assert!((j[(0, 0)] - 0.1 * 0.3f64.cos()).abs() < 1e-9);
    }
}
