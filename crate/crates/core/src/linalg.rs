//! Dense matrix utilities: operator norms, Gram–Schmidt QR, SPD square
//! roots, principal logarithms and projections.
//!
//! Storage is nalgebra's `DMatrix`. Real matrices are [`Mat`], complex ones
//! [`CMat`]; the complex type only appears where a result can genuinely
//! leave the real field (logarithms, Floquet exponents).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used by the Gram–Schmidt rank test.
pub const QR_RANK_TOL: f64 = 1e-13;

/// Eigenvalues closer than this to the negative real axis are put on the
/// branch with argument `+pi`.
pub const BRANCH_CUT_TOL: f64 = 1e-10;

fn check_finite(m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

fn check_square(rows: usize, cols: usize, what: &str) -> Result<()> {
    if rows != cols || rows == 0 {
        return Err(Error::Shape(format!("{what} needs a nonempty square matrix, got {rows}x{cols}")));
    }
    Ok(())
}

/// Largest singular value.
pub fn operator_norm_2(m: &Mat) -> Result<f64> {
    check_finite(m)?;
    Ok(norm2(m))
}

/// Largest singular value without the finiteness check; internal hot path.
pub(crate) fn norm2(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    if m.nrows() == 2 || m.ncols() == 2 {
        // largest eigenvalue of the 2x2 Gram matrix
        let g = if m.nrows() == 2 { m * m.transpose() } else { m.transpose() * m };
        let (a, b, c) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
        let half = 0.5 * (a - c);
        return (0.5 * (a + c) + half.hypot(b)).max(0.0).sqrt();
    }
    m.singular_values().max()
}

/// Orthonormal basis of the dominant `rank`-dimensional column space of `m`.
pub fn column_space(m: &Mat, rank: usize) -> Mat {
    let n = m.nrows();
    if rank == 0 {
        return Mat::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Mat::from_fn(n, rank, |i, j| u[(i, idx[j])])
}

pub fn operator_norm_2_complex(m: &CMat) -> Result<f64> {
    if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(m.singular_values().max())
}

/// Gram–Schmidt QR with the default rank threshold.
pub fn gram_schmidt_qr(m: &Mat) -> Result<(Mat, Mat)> {
    gram_schmidt_qr_with(m, QR_RANK_TOL)
}

/// Modified Gram–Schmidt with one reorthogonalization pass.
///
/// Returns `(Q, R)` with `M = QR`, `Q` orthogonal and `R` upper triangular
/// with `r_ii = |xi_i| > 0`. A column whose orthogonal residual falls below
/// `rel_tol` times its original norm is reported as rank loss.
pub fn gram_schmidt_qr_with(m: &Mat, rel_tol: f64) -> Result<(Mat, Mat)> {
    check_square(m.nrows(), m.ncols(), "gram_schmidt_qr")?;
    check_finite(m)?;
    let n = m.ncols();
    let mut q = Mat::zeros(n, n);
    let mut r = Mat::zeros(n, n);
    for j in 0..n {
        let original = m.column(j).norm();
        let mut v = m.column(j).clone_owned();
        for _pass in 0..2 {
            for i in 0..j {
                let c = q.column(i).dot(&v);
                r[(i, j)] += c;
                v.axpy(-c, &q.column(i), 1.0);
            }
        }
        let len = v.norm();
        if !(len > rel_tol * original) || len == 0.0 {
            return Err(Error::DegenerateBasis { column: j, residual: len });
        }
        r[(j, j)] = len;
        q.set_column(j, &(v / len));
    }
    Ok((q, r))
}

/// The unique symmetric positive definite square root.
pub fn spd_sqrt(u: &Mat) -> Result<Mat> {
    check_square(u.nrows(), u.ncols(), "spd_sqrt")?;
    check_finite(u)?;
    let scale = u.abs().max().max(f64::MIN_POSITIVE);
    let asym = (u - u.transpose()).abs().max();
    if asym > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite(format!("asymmetry {asym:e}")));
    }
    if u.nrows() == 1 {
        let x = u[(0, 0)];
        if !(x > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("eigenvalue {x:e}")));
        }
        return Ok(Mat::from_element(1, 1, x.sqrt()));
    }
    let sym = (u + u.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmin <= 1e-15 * lmax {
        return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {lmin:e}")));
    }
    let v = &eig.eigenvectors;
    let d = Mat::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let r = v * d * v.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Principal logarithm with metadata about how it was obtained.
#[derive(Debug, Clone)]
pub struct MatrixLog {
    pub value: CMat,
    /// Imaginary parts are negligible; `real_part()` is then the real log.
    pub is_real: bool,
    /// Some eigenvalue sat on the negative real axis and was assigned
    /// argument `+pi`.
    pub on_branch_cut: bool,
    /// Number of square roots taken before the series evaluation.
    pub square_roots: u32,
}

impl MatrixLog {
    pub fn real_part(&self) -> Mat {
        self.value.map(|z| z.re)
    }
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Principal logarithm of a real invertible matrix.
pub fn principal_log(m: &Mat) -> Result<MatrixLog> {
    check_finite(m)?;
    principal_log_complex(&to_complex(m))
}

/// Principal logarithm by complex Schur form and inverse scaling and
/// squaring. Works for defective matrices; eigenvalues on the negative
/// real axis get argument `+pi`.
pub fn principal_log_complex(m: &CMat) -> Result<MatrixLog> {
    let n = m.nrows();
    check_square(n, m.ncols(), "principal_log")?;
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (u, mut t) = m.clone().schur().unpack();
    let mut det_abs = 1.0f64;
    let mut on_branch_cut = false;
    for i in 0..n {
        let z = t[(i, i)];
        det_abs *= z.norm() / scale;
        if z.norm() <= 1e-14 * scale {
            return Err(Error::SingularMatrix { det: det_abs });
        }
        if z.re < 0.0 && z.im.abs() <= BRANCH_CUT_TOL * z.norm() {
            on_branch_cut = true;
            t[(i, i)] = Complex64::new(z.re, 0.0);
        }
    }
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }

    let identity = CMat::identity(n, n);
    let mut roots = 0u32;
    while (&t - &identity).iter().map(|z| z.norm()).fold(0.0, f64::max) * n as f64 > 0.25 {
        if roots >= 64 {
            return Err(Error::NumericalInconsistency(
                "square-root sequence did not approach the identity".into(),
            ));
        }
        t = sqrt_upper_triangular(&t)?;
        roots += 1;
    }
    let x = &t - &identity;
    let mut term = x.clone();
    let mut sum = x.clone();
    for k in 2..200 {
        term = &term * &x;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        let contrib = &term * Complex64::new(sign / k as f64, 0.0);
        let size = contrib.iter().map(|z| z.norm()).fold(0.0, f64::max);
        sum += contrib;
        if size < 1e-18 {
            break;
        }
    }
    let log_t = sum * Complex64::new(2f64.powi(roots as i32), 0.0);
    let value = &u * log_t * u.adjoint();
    let big = value.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let is_real = value.iter().all(|z| z.im.abs() <= 1e-10 * big);
    Ok(MatrixLog { value, is_real, on_branch_cut, square_roots: roots })
}

fn sqrt_upper_triangular(t: &CMat) -> Result<CMat> {
    let n = t.nrows();
    let mut r = CMat::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = t[(i, i)].sqrt();
    }
    for d in 1..n {
        for i in 0..n - d {
            let j = i + d;
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            let denom = r[(i, i)] + r[(j, j)];
            if denom.norm() == 0.0 {
                return Err(Error::SingularMatrix { det: 0.0 });
            }
            r[(i, j)] = s / denom;
        }
    }
    Ok(r)
}

pub fn expm(m: &Mat) -> Mat {
    m.clone().exp()
}

pub fn expm_complex(m: &CMat) -> CMat {
    m.clone().exp()
}

/// Inverse through LU, refusing numerically singular input.
pub fn inverse(m: &Mat) -> Result<Mat> {
    check_square(m.nrows(), m.ncols(), "inverse")?;
    let lu = m.clone().lu();
    let det = lu.determinant();
    lu.try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or(Error::SingularMatrix { det: det.abs() })
}

/// `sigma_max / sigma_min`; infinite for singular input.
pub fn condition_number(m: &Mat) -> f64 {
    let sv = m.singular_values();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

/// Counterclockwise rotation by `theta`.
pub fn rotation(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Rows of a matrix, for serialization.
pub fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// An idempotent matrix together with its rank and idempotency defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    #[serde(with = "mat_rows")]
    pub matrix: Mat,
    pub rank: usize,
    pub idempotency_residual: f64,
}

impl ProjectionMatrix {
    /// Validates idempotency to `tol` (relative to `|P|`, floored at one).
    pub fn new(matrix: Mat, tol: f64) -> Result<Self> {
        check_square(matrix.nrows(), matrix.ncols(), "projection")?;
        check_finite(&matrix)?;
        let residual = norm2(&(&matrix * &matrix - &matrix));
        if residual > tol * norm2(&matrix).max(1.0) {
            return Err(Error::InvalidInput(format!(
                "matrix is not a projection (|P^2 - P| = {residual:e})"
            )));
        }
        let rank = matrix
            .complex_eigenvalues()
            .iter()
            .filter(|z| (*z - Complex64::new(1.0, 0.0)).norm() < 0.5)
            .count();
        Ok(Self { matrix, rank, idempotency_residual: residual })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The complementary projection `I - P`.
    pub fn complement(&self) -> ProjectionMatrix {
        let n = self.dim();
        ProjectionMatrix {
            matrix: Mat::identity(n, n) - &self.matrix,
            rank: n - self.rank,
            idempotency_residual: self.idempotency_residual,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rank == self.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.rank == 0
    }

    /// True when `P = diag(I_r, 0)` up to `tol`.
    pub fn is_canonical(&self, tol: f64) -> bool {
        let n = self.dim();
        let c = Mat::from_fn(n, n, |i, j| if i == j && i < self.rank { 1.0 } else { 0.0 });
        (&self.matrix - c).abs().max() <= tol
    }
}

/// `diag(I_r, 0)` of size `n`.
pub fn canonical_projection(r: usize, n: usize) -> Result<ProjectionMatrix> {
    if n == 0 || r > n {
        return Err(Error::InvalidInput(format!("canonical projection needs 0 <= r <= n, got r={r}, n={n}")));
    }
    let matrix = Mat::from_fn(n, n, |i, j| if i == j && i < r { 1.0 } else { 0.0 });
    Ok(ProjectionMatrix { matrix, rank: r, idempotency_residual: 0.0 })
}

/// Projection with image spanned by the columns of `image` and kernel
/// spanned by the columns of `kernel`.
pub fn oblique_projection(image: &Mat, kernel: &Mat) -> Result<ProjectionMatrix> {
    let n = image.nrows();
    let r = image.ncols();
    if kernel.nrows() != n || r + kernel.ncols() != n {
        return Err(Error::Shape(format!(
            "image ({}) and kernel ({}) columns must add up to n = {n}",
            r,
            kernel.ncols()
        )));
    }
    let mut basis = Mat::zeros(n, n);
    basis.columns_mut(0, r).copy_from(image);
    basis.columns_mut(r, n - r).copy_from(kernel);
    let inv = inverse(&basis)?;
    let canon = canonical_projection(r, n)?;
    let matrix = &basis * canon.matrix * inv;
    let residual = norm2(&(&matrix * &matrix - &matrix));
    Ok(ProjectionMatrix { matrix, rank: r, idempotency_residual: residual })
}

/// Orthonormal basis of the orthogonal complement of the column span of an
/// orthonormal `basis`.
pub fn orthogonal_complement(basis: &Mat) -> Mat {
    let n = basis.nrows();
    let r = basis.ncols();
    if r == 0 {
        return Mat::identity(n, n);
    }
    if r >= n {
        return Mat::zeros(n, 0);
    }
    let proj = basis * basis.transpose();
    let resid = Mat::identity(n, n) - proj;
    let svd = resid.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Mat::from_fn(n, n - r, |i, j| u[(i, idx[j])])
}

/// Smallest principal angle between the spans of two orthonormal bases.
/// Returns `pi/2` when either span is trivial.
pub fn min_principal_angle(a: &Mat, b: &Mat) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let c = a.transpose() * b;
    let s = norm2(&c).min(1.0);
    s.acos()
}

pub(crate) mod mat_rows {
    use super::Mat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        super::rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
