//! Moment estimators of `(β, τ², α, γ)` and the loop that combines them.
//!
//! `α` and `γ` depend only on the variance statistics and are solved jointly
//! by alternating their two estimating equations. `τ²` then follows from
//! least-squares residuals, and `β` from generalized least squares with the
//! shrinkage weights `1 − B_j`.

use serde::{Deserialize, Serialize};

use crate::error::{FhrdError, Result};
use crate::model::{dot, shrinkage_unchecked, validate_dataset, AreaRecord, ModelParams, Theta};
use crate::numerics::roots::{brent, RootOptions};
use crate::numerics::{sum, weighted_least_squares};

/// Residuals used by the `τ²` moment estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tau2Residuals {
    /// Residuals from ordinary least squares, computed once.
    #[default]
    Ols,
    /// Iterate `τ²` and the GLS fit of `β` to a joint fixed point.
    Gls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Cap on alternation sweeps (and on GLS re-weighting sweeps).
    pub max_iter: usize,
    /// Relative change in `(α, γ)` that ends the alternation.
    pub tol: f64,
    /// `τ²` is floored at this multiple of `mean(V_i/n_i)`.
    pub tau_floor_multiplier: f64,
    /// Search interval for the fallback `α` root; estimates are clamped to it.
    pub alpha_bracket: (f64, f64),
    /// Starting value of `α`; `γ` starts at `(α₀ − 2)·mean(V_i/n_i)`.
    pub alpha_init: f64,
    pub tau2_residuals: Tau2Residuals,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            tau_floor_multiplier: 1e-8,
            alpha_bracket: (1e-4, 1e3),
            alpha_init: 4.0,
            tau2_residuals: Tau2Residuals::Ols,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.alpha_bracket;
        if self.max_iter == 0 {
            return Err(FhrdError::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(FhrdError::InvalidInput("tol must be positive".into()));
        }
        if !(self.tau_floor_multiplier >= 0.0 && self.tau_floor_multiplier.is_finite()) {
            return Err(FhrdError::InvalidInput("tau_floor_multiplier must be nonnegative".into()));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(FhrdError::InvalidInput(format!("invalid alpha bracket [{lo}, {hi}]")));
        }
        if !(self.alpha_init > 2.0 && self.alpha_init.is_finite()) {
            return Err(FhrdError::InvalidInput("alpha_init must exceed 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub ols_beta: Vec<f64>,
    /// Alternation sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    pub tau2_raw: f64,
    pub tau2_truncated: bool,
    /// The closed-form `α` root was unavailable at least once.
    pub alpha_fallback_used: bool,
    /// The alternation stalled and `(α, γ)` came from the profile solve.
    pub profile_solve_used: bool,
    /// `α̂` sits on an end of the search bracket. The upper end is reached
    /// when the variance statistics show no excess dispersion.
    pub alpha_at_bound: bool,
    /// Relative change of `(α, γ)` under one more alternation sweep.
    pub residual_norm: f64,
    /// `min(n_i) + α̂ ≤ 4`; second-order MSE results do not cover this case.
    pub small_dof_warning: bool,
}

fn designs(data: &[AreaRecord]) -> Vec<&[f64]> {
    data.iter().map(|r| r.z.as_slice()).collect()
}

pub fn estimate_beta_ols(data: &[AreaRecord]) -> Result<Vec<f64>> {
    validate_dataset(data)?;
    let y: Vec<f64> = data.iter().map(|r| r.y).collect();
    weighted_least_squares(&designs(data), &y, &vec![1.0; data.len()])
}

/// GLS with weights `1 − B_j`.
///
/// The weights are used in the form `A_j/(1 + τ²A_j) = (1 − B_j)/τ²`, which
/// has the same solution for `τ² > 0` and stays defined at `τ² = 0`.
pub fn estimate_beta_gls(data: &[AreaRecord], theta: Theta) -> Result<Vec<f64>> {
    validate_dataset(data)?;
    theta.validate()?;
    let w: Vec<f64> = data
        .iter()
        .map(|r| {
            let a = shrinkage_unchecked(theta, r.v, r.n).a;
            a / (1.0 + theta.tau2 * a)
        })
        .collect();
    let y: Vec<f64> = data.iter().map(|r| r.y).collect();
    weighted_least_squares(&designs(data), &y, &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau2Estimate {
    pub value: f64,
    pub raw: f64,
    pub truncated: bool,
}

/// Moment estimator of `τ²` from residuals `y_i − z_iᵀβ`, floored at
/// `floor_multiplier · mean(V_i/n_i)`.
pub fn estimate_tau2(
    data: &[AreaRecord],
    alpha: f64,
    gamma: f64,
    beta: &[f64],
    floor_multiplier: f64,
) -> Result<Tau2Estimate> {
    validate_dataset(data)?;
    Theta::new(0.0, alpha, gamma)?;
    if beta.len() != data[0].z.len() {
        return Err(FhrdError::InvalidInput("beta length differs from covariates".into()));
    }
    if let Some(r) = data.iter().find(|r| f64::from(r.n) + alpha <= 2.0) {
        return Err(FhrdError::MomentUndefined(format!(
            "area {}: n + alpha = {} must exceed 2",
            r.area_id,
            f64::from(r.n) + alpha
        )));
    }
    let denom = sum(data.iter().map(|r| (alpha / gamma) / (f64::from(r.n) + alpha)));
    let num = sum(data.iter().map(|r| {
        let e = r.y - dot(&r.z, beta);
        e * e / (r.v + gamma) - 1.0 / (f64::from(r.n) + alpha - 2.0)
    }));
    let raw = num / denom;
    let floor = floor_multiplier * sum(data.iter().map(|r| r.v / f64::from(r.n))) / data.len() as f64;
    if !raw.is_finite() {
        return Err(FhrdError::Numeric(format!("tau2 estimate is {raw}")));
    }
    Ok(if raw < floor {
        Tau2Estimate { value: floor, raw, truncated: true }
    } else {
        Tau2Estimate { value: raw, raw, truncated: false }
    })
}

/// Coefficients of `aα² + bα − c = 0` for a given `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AlphaQuadratic {
    pub fn new(data: &[AreaRecord], gamma: f64) -> Self {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for r in data {
            let n = f64::from(r.n);
            let s = r.v + gamma;
            let l = s.ln();
            a += r.v / s * l;
            b += n * (r.v - gamma) / s * l;
            c += n * (n * gamma / s * l + 2.0);
        }
        Self { a, b, c }
    }

    pub fn residual(&self, alpha: f64) -> f64 {
        (self.a * alpha + self.b) * alpha - self.c
    }

    /// The unique positive root, when there is exactly one.
    pub fn positive_root(&self) -> Option<f64> {
        let Self { a, b, c } = *self;
        if !(a > 0.0) {
            return None;
        }
        let disc = b * b + 4.0 * a * c;
        if !(disc >= 0.0) {
            return None;
        }
        // One positive root exactly when the root product −c/a is negative.
        if !(c > 0.0) {
            return None;
        }
        let sq = disc.sqrt();
        let root = if b >= 0.0 { 2.0 * c / (b + sq) } else { (sq - b) / (2.0 * a) };
        (root.is_finite() && root > 0.0).then_some(root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub value: f64,
    pub fallback_used: bool,
    pub quadratic: AlphaQuadratic,
}

/// Sum over areas of the `α` moment identity, before clearing denominators.
fn alpha_identity(data: &[AreaRecord], gamma: f64, alpha: f64) -> f64 {
    sum(data.iter().map(|r| {
        let n = f64::from(r.n);
        let s = r.v + gamma;
        let l = s.ln();
        r.v / s * l - n / (n + alpha) * (l + 2.0 / (n + alpha))
    }))
}

pub fn estimate_alpha(data: &[AreaRecord], gamma: f64, bracket: (f64, f64)) -> Result<AlphaEstimate> {
    validate_dataset(data)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(crate::error::domain(format!("gamma must be positive, got {gamma}")));
    }
    let quadratic = AlphaQuadratic::new(data, gamma);
    let (value, fallback_used) = match quadratic.positive_root() {
        Some(root) => (root, false),
        None => {
            let root = brent(
                |alpha| alpha_identity(data, gamma, alpha),
                bracket.0,
                bracket.1,
                RootOptions::default(),
                "alpha moment equation",
            )?;
            (root.x, true)
        }
    };
    Ok(AlphaEstimate { value: value.clamp(bracket.0, bracket.1), fallback_used, quadratic })
}

/// `Σ V_i/(V_i+γ) − Σ n_i/(n_i+α)`, strictly decreasing in `γ`.
pub fn gamma_equation(data: &[AreaRecord], alpha: f64, gamma: f64) -> f64 {
    let target = sum(data.iter().map(|r| f64::from(r.n) / (f64::from(r.n) + alpha)));
    sum(data.iter().map(|r| r.v / (r.v + gamma))) - target
}

pub fn estimate_gamma(data: &[AreaRecord], alpha: f64) -> Result<f64> {
    validate_dataset(data)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(crate::error::domain(format!("alpha must be positive, got {alpha}")));
    }
    let target = sum(data.iter().map(|r| f64::from(r.n) / (f64::from(r.n) + alpha)));
    let f = |log_g: f64| {
        let g = log_g.exp();
        sum(data.iter().map(|r| r.v / (r.v + g))) - target
    };
    // Widen a bracket in log γ around the median scale of V.
    let mut vs: Vec<f64> = data.iter().map(|r| r.v).collect();
    vs.sort_by(f64::total_cmp);
    let centre = vs[vs.len() / 2].ln();
    let (mut lo, mut hi) = (centre - 1.0, centre + 1.0);
    while f(lo) <= 0.0 {
        lo -= 4.0;
        if lo < -700.0 {
            return Err(FhrdError::NoRoot { what: "gamma equation".into(), lo: lo.exp(), hi: hi.exp() });
        }
    }
    while f(hi) >= 0.0 {
        hi += 4.0;
        if hi > 700.0 {
            return Err(FhrdError::NoRoot { what: "gamma equation".into(), lo: lo.exp(), hi: hi.exp() });
        }
    }
    let opts = RootOptions { rel_tol: 0.0, abs_tol: 1e-12, max_iter: 200 };
    let root = brent(f, lo, hi, opts, "gamma equation")?;
    Ok(root.x.exp())
}

struct Sweep {
    alpha: f64,
    gamma: f64,
    fallback: bool,
}

fn sweep(data: &[AreaRecord], gamma: f64, opts: &FitOptions) -> Result<Sweep> {
    let a = estimate_alpha(data, gamma, opts.alpha_bracket)?;
    let g = estimate_gamma(data, a.value)?;
    Ok(Sweep { alpha: a.value, gamma: g, fallback: a.fallback_used })
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs()
}

/// Solves the `α` equation with `γ` profiled out, scanning a geometric grid
/// for the first sign change of `α̂(γ(α)) − α`.
fn profile_solve(data: &[AreaRecord], opts: &FitOptions) -> Result<(f64, f64)> {
    let (lo, hi) = opts.alpha_bracket;
    let f = |alpha: f64| -> f64 {
        match estimate_gamma(data, alpha).and_then(|g| estimate_alpha(data, g, opts.alpha_bracket)) {
            Ok(a) => a.value - alpha,
            Err(_) => f64::NAN,
        }
    };
    const GRID: usize = 120;
    let ratio = (hi / lo).powf(1.0 / GRID as f64);
    let mut x0 = lo;
    let mut f0 = f(x0);
    for _ in 0..GRID {
        let x1 = (x0 * ratio).min(hi);
        let f1 = f(x1);
        if f1 == 0.0 {
            return Ok((x1, estimate_gamma(data, x1)?));
        }
        if f0.is_finite() && f1.is_finite() && f0.signum() != f1.signum() {
            let root = brent(f, x0, x1, RootOptions::default(), "profiled alpha equation")?;
            return Ok((root.x, estimate_gamma(data, root.x)?));
        }
        x0 = x1;
        f0 = f1;
    }
    Err(FhrdError::NoRoot { what: "profiled alpha equation".into(), lo, hi })
}

/// Fits all parameters: `(α, γ)` by alternation, then `τ²`, then GLS `β`.
pub fn fit(data: &[AreaRecord], options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let p = validate_dataset(data)?;
    let m = data.len();
    if m < p + 1 {
        return Err(FhrdError::InvalidInput(format!("{m} areas cannot fit {p} coefficients plus variance parameters")));
    }
    let ols_beta = estimate_beta_ols(data)?;

    let mean_scale = sum(data.iter().map(|r| r.v / f64::from(r.n))) / m as f64;
    let mut alpha = options.alpha_init;
    let mut gamma = (options.alpha_init - 2.0) * mean_scale;
    let mut fallback = false;
    let mut iterations = 0;
    let mut residual_norm = f64::INFINITY;
    while iterations < options.max_iter {
        iterations += 1;
        let s = sweep(data, gamma, options)?;
        fallback |= s.fallback;
        residual_norm = rel_change(s.alpha, alpha).max(rel_change(s.gamma, gamma));
        alpha = s.alpha;
        gamma = s.gamma;
        if residual_norm < options.tol {
            break;
        }
    }

    let mut profile_solve_used = false;
    if !(residual_norm < options.tol) {
        if let Ok((a, g)) = profile_solve(data, options) {
            let s = sweep(data, g, options)?;
            let check = rel_change(s.alpha, a).max(rel_change(s.gamma, g));
            if check < residual_norm {
                alpha = a;
                gamma = g;
                residual_norm = check;
                fallback |= s.fallback;
                profile_solve_used = true;
            }
        }
    }

    let floor = options.tau_floor_multiplier;
    let mut tau2 = estimate_tau2(data, alpha, gamma, &ols_beta, floor)?;
    let mut beta = estimate_beta_gls(data, Theta { tau2: tau2.value, alpha, gamma })?;
    if options.tau2_residuals == Tau2Residuals::Gls {
        for _ in 0..options.max_iter {
            let next = estimate_tau2(data, alpha, gamma, &beta, floor)?;
            let done = rel_change(next.value, tau2.value) < options.tol;
            tau2 = next;
            beta = estimate_beta_gls(data, Theta { tau2: tau2.value, alpha, gamma })?;
            if done {
                break;
            }
        }
    }

    let min_n = data.iter().map(|r| r.n).min().unwrap_or(0);
    Ok(FitResult {
        params: ModelParams { beta, tau2: tau2.value, alpha, gamma },
        ols_beta,
        iterations,
        converged: residual_norm < options.tol,
        tau2_raw: tau2.raw,
        tau2_truncated: tau2.truncated,
        alpha_fallback_used: fallback,
        profile_solve_used,
        residual_norm,
        alpha_at_bound: alpha <= options.alpha_bracket.0 || alpha >= options.alpha_bracket.1,
        small_dof_warning: f64::from(min_n) + alpha <= 4.0,
    })
}
