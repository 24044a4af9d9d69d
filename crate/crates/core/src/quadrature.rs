//! Gauss-Legendre rules and an adaptive driver for piecewise-smooth integrands.
//!
//! Callers split the integration range at every known non-smooth point; inside
//! each piece the integrand is smooth and a 10/20-point pair is compared for
//! the local error estimate.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule10() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(10))
}

fn rule20() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(20))
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-15,
            max_depth: 40,
        }
    }
}

fn apply_rule<F>(f: &mut F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>), dim: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = vec![0.0; dim];
    for (x, w) in rule.0.iter().zip(&rule.1) {
        let v = f(c + h * x)?;
        for (s, vi) in acc.iter_mut().zip(&v) {
            *s += w * h * vi;
        }
    }
    Ok(acc)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Adaptive integral of a vector-valued integrand of length `dim` over each
/// piece between consecutive `cuts` (which must be sorted).
pub fn integrate_pieces<F>(mut f: F, cuts: &[f64], dim: usize, opts: QuadOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let mut total = vec![0.0; dim];
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let piece = integrate_adaptive(&mut f, w[0], w[1], dim, opts)?;
        for (t, p) in total.iter_mut().zip(&piece) {
            *t += p;
        }
    }
    Ok(total)
}

/// Adaptive Gauss-Legendre on a single smooth piece.
pub fn integrate_adaptive<F>(f: &mut F, a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let coarse = apply_rule(f, a, b, rule10(), dim)?;
    let fine = apply_rule(f, a, b, rule20(), dim)?;
    recurse(f, a, b, coarse, fine, dim, opts, 0)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &mut F,
    a: f64,
    b: f64,
    coarse: Vec<f64>,
    fine: Vec<f64>,
    dim: usize,
    opts: QuadOptions,
    depth: u32,
) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let err = max_diff(&coarse, &fine);
    if err <= opts.abs_tol + opts.rel_tol * max_abs(&fine) {
        return Ok(fine);
    }
    if depth >= opts.max_depth {
        return Err(Error::Convergence {
            what: "adaptive quadrature",
            iterations: depth as usize,
            residual: err,
        });
    }
    let m = 0.5 * (a + b);
    let lc = apply_rule(f, a, m, rule10(), dim)?;
    let lf = apply_rule(f, a, m, rule20(), dim)?;
    let rc = apply_rule(f, m, b, rule10(), dim)?;
    let rf = apply_rule(f, m, b, rule20(), dim)?;
    // Children inherit an absolute budget proportional to their share.
    let child = QuadOptions {
        abs_tol: 0.5 * opts.abs_tol.max(opts.rel_tol * max_abs(&fine)),
        rel_tol: 0.0,
        ..opts
    };
    let mut left = recurse(f, a, m, lc, lf, dim, child, depth + 1)?;
    let right = recurse(f, m, b, rc, rf, dim, child, depth + 1)?;
    for (l, r) in left.iter_mut().zip(&right) {
        *l += r;
    }
    Ok(left)
}

/// Scalar convenience wrapper.
pub fn integrate_scalar<F>(mut f: F, cuts: &[f64], opts: QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    Ok(integrate_pieces(|t| Ok(vec![f(t)?]), cuts, 1, opts)?[0])
}
