//! Adaptive Simpson quadrature, scalar and vector valued.

/// Maximum bisection depth of a single panel.
const MAX_DEPTH: u32 = 48;

fn panels(a: f64, b: f64) -> usize {
    ((b - a).abs().ceil() as usize).clamp(8, 1 << 16)
}

/// `int_a^b f` to absolute accuracy about `tol`.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = panels(a, b);
    let h = (b - a) / m as f64;
    let ptol = tol / m as f64;
    let mut total = 0.0;
    for k in 0..m {
        let x0 = a + h * k as f64;
        let x2 = if k + 1 == m { b } else { x0 + h };
        let x1 = 0.5 * (x0 + x2);
        let (f0, f1, f2) = (f(x0), f(x1), f(x2));
        let whole = (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2);
        total += simpson_rec(&mut f, x0, x2, f0, f1, f2, whole, ptol, MAX_DEPTH);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || !delta.is_finite() {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Vector-valued adaptive Simpson; `f(s, out)` fills `out` with the
/// integrand. Convergence is judged in the max norm.
pub fn simpson_vec<F: FnMut(f64, &mut [f64])>(mut f: F, a: f64, b: f64, dim: usize, tol: f64) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    if a == b {
        return total;
    }
    let m = panels(a, b);
    let h = (b - a) / m as f64;
    let ptol = tol / m as f64;
    let eval = |f: &mut F, x: f64| {
        let mut v = vec![0.0; dim];
        f(x, &mut v);
        v
    };
    for k in 0..m {
        let x0 = a + h * k as f64;
        let x2 = if k + 1 == m { b } else { x0 + h };
        let x1 = 0.5 * (x0 + x2);
        let (f0, f1, f2) = (eval(&mut f, x0), eval(&mut f, x1), eval(&mut f, x2));
        let whole = combine(x2 - x0, &f0, &f1, &f2);
        let part = simpson_vec_rec(&mut f, x0, x2, &f0, &f1, &f2, whole, ptol, MAX_DEPTH);
        total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
    }
    total
}

fn combine(width: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    (0..fa.len()).map(|i| width / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i])).collect()
}

#[allow(clippy::too_many_arguments)]
fn simpson_vec_rec<F: FnMut(f64, &mut [f64])>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: Vec<f64>,
    tol: f64,
    depth: u32,
) -> Vec<f64> {
    let dim = fa.len();
    let m = 0.5 * (a + b);
    let mut flm = vec![0.0; dim];
    let mut frm = vec![0.0; dim];
    f(0.5 * (a + m), &mut flm);
    f(0.5 * (m + b), &mut frm);
    let left = combine(m - a, fa, &flm, fm);
    let right = combine(b - m, fm, &frm, fb);
    let delta: Vec<f64> = (0..dim).map(|i| left[i] + right[i] - whole[i]).collect();
    let err = delta.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if depth == 0 || err <= 15.0 * tol || !err.is_finite() {
        return (0..dim).map(|i| left[i] + right[i] + delta[i] / 15.0).collect();
    }
    let l = simpson_vec_rec(f, a, m, fa, &flm, fm, left, 0.5 * tol, depth - 1);
    let r = simpson_vec_rec(f, m, b, fm, &frm, fb, right, 0.5 * tol, depth - 1);
    l.into_iter().zip(r).map(|(x, y)| x + y).collect()
}

/// Running integral `int_{grid[0]}^{grid[k]} f` at every grid point.
pub fn cumulative<F: FnMut(f64) -> f64>(mut f: F, grid: &[f64], tol: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    if grid.is_empty() {
        return out;
    }
    out.push(0.0);
    let per = tol / grid.len().max(1) as f64;
    for w in grid.windows(2) {
        acc += simpson(&mut f, w[0], w[1], per);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_transcendentals() {
        assert!((simpson(|x| x * x, 0.0, 3.0, 1e-12) - 9.0).abs() < 1e-12);
        assert!((simpson(f64::sin, 0.0, std::f64::consts::PI, 1e-12) - 2.0).abs() < 1e-11);
        assert!((simpson(|x| 1.0 / (1.0 + x * x), 0.0, 40.0, 1e-12) - 40f64.atan()).abs() < 1e-11);
        assert!((simpson(|x| x, 2.0, -1.0, 1e-12) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn vector_version() {
        let v = simpson_vec(|x, out| { out[0] = x.cos(); out[1] = (-x).exp(); }, 0.0, 5.0, 2, 1e-12);
        assert!((v[0] - 5f64.sin()).abs() < 1e-11);
        assert!((v[1] - (1.0 - (-5f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn running_integral() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.5).collect();
        let c = cumulative(|x| 2.0 * x, &grid, 1e-12);
        for (x, v) in grid.iter().zip(c) {
            assert!((v - x * x).abs() < 1e-12);
        }
    }
}
