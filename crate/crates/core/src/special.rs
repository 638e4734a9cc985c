//! Log-gamma, digamma and trigamma on the positive half-line.
//!
//! All three shift the argument upward with the standard recurrences until
//! it reaches [`ASYMPTOTIC_FROM`], then sum an asymptotic series in `1/x`.
//! Over `[1e-3, 1e6]` the absolute error is below `1e-12` wherever the
//! function value is of order one, and the relative error is below `1e-14`
//! where the value itself is large.

use crate::error::{domain, Result};

const ASYMPTOTIC_FROM: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// B_{2k} / (2k (2k-1)), k = 1..8
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

// B_{2k} / (2k), k = 1..7
const DIGAMMA_SERIES: [f64; 7] =
    [1.0 / 12.0, -1.0 / 120.0, 1.0 / 252.0, -1.0 / 240.0, 1.0 / 132.0, -691.0 / 32_760.0, 1.0 / 12.0];

// B_{2k}, k = 1..7
const TRIGAMMA_SERIES: [f64; 7] =
    [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0];

fn check(x: f64, name: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} requires a finite positive argument, got {x}")))
    }
}

/// `ln Γ(x)` for finite `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check(x, "log_gamma")?;
    Ok(ln_gamma_unchecked(x))
}

/// `ψ(x) = d/dx ln Γ(x)` for finite `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check(x, "digamma")?;
    Ok(digamma_unchecked(x))
}

/// `ψ'(x)` for finite `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    check(x, "trigamma")?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut prod = 1.0;
    while z < ASYMPTOTIC_FROM {
        prod *= z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv;
    for c in STIRLING {
        series += c * power;
        power *= inv2;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series - prod.ln()
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_FROM {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut power = inv2;
    for c in DIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    z.ln() - 0.5 / z - series - shift
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_FROM {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv2 * inv;
    for c in TRIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    inv + 0.5 * inv2 + series + shift
}
