//! Bracketed scalar root finding (Brent's method).

use crate::error::{FhrdError, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Stop once the bracket is narrower than `rel_tol * |x| + abs_tol`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, abs_tol: 1e-300, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
    /// Final bracket, ordered.
    pub bracket: (f64, f64),
}

/// Finds a root of `f` in `[lo, hi]`; `f(lo)` and `f(hi)` must differ in sign.
pub fn brent<F>(mut f: F, lo: f64, hi: f64, opts: RootOptions, what: &str) -> Result<Root>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa.is_nan() || fb.is_nan() {
        return Err(FhrdError::Numeric(format!("{what}: NaN at bracket end")));
    }
    if fa == 0.0 {
        return Ok(Root { x: a, fx: fa, iterations: 0, bracket: (a, a) });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: fb, iterations: 0, bracket: (b, b) });
    }
    if fa.signum() == fb.signum() {
        return Err(FhrdError::NoRoot { what: what.to_string(), lo, hi });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (opts.rel_tol * b.abs() + opts.abs_tol);
        let half = 0.5 * (c - b);
        if half.abs() <= tol || fb == 0.0 {
            let bracket = if b < c { (b, c) } else { (c, b) };
            return Ok(Root { x: b, fx: fb, iterations: iter, bracket });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            // inverse quadratic interpolation, or secant when only two points are distinct
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * half * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * half * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * half * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = half;
                e = d;
            }
        } else {
            d = half;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(half) };
        fb = f(b);
        if fb.is_nan() {
            return Err(FhrdError::Numeric(format!("{what}: NaN at x = {b}")));
        }
    }
    Err(FhrdError::Numeric(format!("{what}: bracket not reduced to tolerance in {} iterations", opts.max_iter)))
}
