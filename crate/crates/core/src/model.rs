//! Domain types, shrinkage coefficients, densities and closed-form moments.
//!
//! All densities are returned on the log scale.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, FhrdError, Result};
use crate::special::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};

/// Observables for one small area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub area_id: String,
    /// Direct estimate of the area mean.
    pub y: f64,
    /// Variance statistic, distributed as `σ²·χ²_n` given `σ²`.
    pub v: f64,
    /// Degrees of freedom of `v`.
    pub n: u32,
    /// Covariates; the first entry is the intercept and must equal 1.
    pub z: Vec<f64>,
}

impl AreaRecord {
    pub fn new(area_id: impl Into<String>, y: f64, v: f64, n: u32, z: Vec<f64>) -> Result<Self> {
        let r = Self { area_id: area_id.into(), y, v, n, z };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.area_id;
        if !self.y.is_finite() {
            return Err(FhrdError::InvalidInput(format!("area {id}: y must be finite")));
        }
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(FhrdError::InvalidInput(format!("area {id}: v must be positive, got {}", self.v)));
        }
        if self.n == 0 {
            return Err(FhrdError::InvalidInput(format!("area {id}: n must be at least 1")));
        }
        if self.z.first() != Some(&1.0) {
            return Err(FhrdError::InvalidInput(format!("area {id}: z must start with the intercept 1")));
        }
        if self.z.iter().any(|x| !x.is_finite()) {
            return Err(FhrdError::InvalidInput(format!("area {id}: covariates must be finite")));
        }
        Ok(())
    }
}

/// Validates every record and a shared covariate length; returns that length.
pub fn validate_dataset(data: &[AreaRecord]) -> Result<usize> {
    let first = data.first().ok_or_else(|| FhrdError::InvalidInput("dataset has no areas".into()))?;
    let p = first.z.len();
    for r in data {
        r.validate()?;
        if r.z.len() != p {
            return Err(FhrdError::InvalidInput(format!("area {}: {} covariates, expected {p}", r.area_id, r.z.len())));
        }
    }
    Ok(p)
}

/// The variance-side parameters `(τ², α, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub tau2: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Theta {
    pub fn new(tau2: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let t = Self { tau2, alpha, gamma };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2.is_finite() && self.tau2 >= 0.0) {
            return Err(domain(format!("tau2 must be finite and nonnegative, got {}", self.tau2)));
        }
        check_alpha_gamma(self.alpha, self.gamma)
    }
}

/// Full parameter vector `(β, τ², α, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, tau2: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let p = Self { beta, tau2, alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(domain("beta must be a nonempty finite vector"));
        }
        self.theta().validate()
    }

    pub fn theta(&self) -> Theta {
        Theta { tau2: self.tau2, alpha: self.alpha, gamma: self.gamma }
    }

    /// The synthetic mean `zᵀβ`.
    pub fn synthetic(&self, z: &[f64]) -> f64 {
        dot(z, &self.beta)
    }
}

/// `A_i = (n+1+α)/(V+γ)` and `B_i = 1/(1+τ²A_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageCoefficients {
    pub a: f64,
    pub b: f64,
}

/// Latent area mean and sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub xi: f64,
    pub sigma2: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_alpha_gamma(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(domain(format!("alpha must be finite and positive, got {alpha}")));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(domain(format!("gamma must be finite and positive, got {gamma}")));
    }
    Ok(())
}

fn check_v(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("v must be finite and positive, got {v}")))
    }
}

fn check_n(n: u32) -> Result<()> {
    if n == 0 {
        Err(domain("n must be at least 1"))
    } else {
        Ok(())
    }
}

pub fn shrinkage(theta: Theta, v: f64, n: u32) -> Result<ShrinkageCoefficients> {
    theta.validate()?;
    check_v(v)?;
    check_n(n)?;
    Ok(shrinkage_unchecked(theta, v, n))
}

pub(crate) fn shrinkage_unchecked(theta: Theta, v: f64, n: u32) -> ShrinkageCoefficients {
    let a = (f64::from(n) + 1.0 + theta.alpha) / (v + theta.gamma);
    let b = 1.0 / (1.0 + theta.tau2 * a);
    ShrinkageCoefficients { a, b }
}

/// `(v+γ)/(n+1+α)`, the shrunk estimate of `σ²`.
///
/// This equals `w·v/(n+1) + (1−w)·γ/α` with `w = (n+1)/(n+1+α)`; both forms
/// are evaluated and must agree to `1e-12` relative.
pub fn dual_shrunk_scale(alpha: f64, gamma: f64, v: f64, n: u32) -> Result<f64> {
    check_alpha_gamma(alpha, gamma)?;
    check_v(v)?;
    check_n(n)?;
    let n1 = f64::from(n) + 1.0;
    let direct = (v + gamma) / (n1 + alpha);
    let w = n1 / (n1 + alpha);
    let combo = w * v / n1 + (1.0 - w) * gamma / alpha;
    if (direct - combo).abs() > 1e-12 * direct.abs() {
        return Err(FhrdError::Numeric(format!("shrunk scale forms disagree: {direct} vs {combo}")));
    }
    Ok(direct)
}

/// Log density of the marginal law of `V`, with `σ²` integrated out.
pub fn log_marginal_v_density(alpha: f64, gamma: f64, n: u32, v: f64) -> Result<f64> {
    check_alpha_gamma(alpha, gamma)?;
    check_v(v)?;
    check_n(n)?;
    let half_n = 0.5 * f64::from(n);
    let half_a = 0.5 * alpha;
    Ok(ln_gamma_unchecked(half_n + half_a) - ln_gamma_unchecked(half_n) - ln_gamma_unchecked(half_a)
        + half_a * gamma.ln()
        + (half_n - 1.0) * v.ln()
        - (half_n + half_a) * (v + gamma).ln())
}

/// Log of the joint density of `(y, V, η)` with `ξ` integrated out and the
/// normalizing constant kept.
pub fn log_joint_y_v_eta_density(params: &ModelParams, z: &[f64], y: f64, v: f64, n: u32, eta: f64) -> Result<f64> {
    params.validate()?;
    check_v(v)?;
    check_n(n)?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(domain(format!("eta must be finite and positive, got {eta}")));
    }
    if z.len() != params.beta.len() {
        return Err(domain("covariate length differs from beta"));
    }
    let half_n = 0.5 * f64::from(n);
    let half_a = 0.5 * params.alpha;
    let ln_c = -(2.0 * PI).ln() - half_n * LN_2 - ln_gamma_unchecked(half_n);
    let r = y - params.synthetic(z);
    let denom = params.tau2 * eta + 1.0;
    Ok(ln_c + half_a * (0.5 * params.gamma).ln() - ln_gamma_unchecked(half_a)
        + (half_n - 1.0) * v.ln()
        + (half_n + 0.5 + half_a - 1.0) * eta.ln()
        + 0.5 * (2.0 * PI).ln()
        - 0.5 * denom.ln()
        - 0.5 * eta * (v + params.gamma + r * r / denom))
}

/// `E[σ² | V] = (V+γ)/(n+α−2)`.
pub fn conditional_sigma2_mean(alpha: f64, gamma: f64, n: u32, v: f64) -> Result<f64> {
    check_alpha_gamma(alpha, gamma)?;
    check_v(v)?;
    check_n(n)?;
    let dof = f64::from(n) + alpha - 2.0;
    if dof <= 0.0 {
        return Err(FhrdError::MomentUndefined(format!("E[sigma2 | V] needs n + alpha > 2, got {}", dof + 2.0)));
    }
    Ok((v + gamma) / dof)
}

struct MomentArgs {
    total: f64,
    upper: f64,
    lower: f64,
}

fn moment_args(alpha: f64, gamma: f64, n: u32, l: f64, k: f64) -> Result<MomentArgs> {
    check_alpha_gamma(alpha, gamma)?;
    check_n(n)?;
    if !(l.is_finite() && k.is_finite()) {
        return Err(domain("moment orders must be finite"));
    }
    let args = MomentArgs {
        total: 0.5 * (f64::from(n) + alpha) + k,
        upper: 0.5 * f64::from(n) + l,
        lower: 0.5 * alpha + k - l,
    };
    if args.upper <= 0.0 || args.lower <= 0.0 || args.total <= 0.0 {
        return Err(domain(format!("E[V^{l}/(V+gamma)^{k}] diverges for n = {n}, alpha = {alpha}")));
    }
    Ok(args)
}

fn ln_moment(alpha: f64, gamma: f64, n: u32, l: f64, k: f64, m: &MomentArgs) -> f64 {
    let half_na = 0.5 * (f64::from(n) + alpha);
    ln_gamma_unchecked(half_na) - ln_gamma_unchecked(m.total) + ln_gamma_unchecked(m.upper)
        - ln_gamma_unchecked(0.5 * f64::from(n))
        + ln_gamma_unchecked(m.lower)
        - ln_gamma_unchecked(0.5 * alpha)
        + (l - k) * gamma.ln()
}

/// `E[V^l / (V+γ)^k]` under the marginal law of `V`.
pub fn analytic_moment_v(alpha: f64, gamma: f64, n: u32, l: f64, k: f64) -> Result<f64> {
    let m = moment_args(alpha, gamma, n, l, k)?;
    Ok(ln_moment(alpha, gamma, n, l, k, &m).exp())
}

/// `E[V^l / (V+γ)^k · log(V+γ)]` under the marginal law of `V`.
pub fn analytic_moment_v_log(alpha: f64, gamma: f64, n: u32, l: f64, k: f64) -> Result<f64> {
    let m = moment_args(alpha, gamma, n, l, k)?;
    let base = ln_moment(alpha, gamma, n, l, k, &m).exp();
    Ok(base * (digamma_unchecked(m.total) - digamma_unchecked(m.lower) + gamma.ln()))
}

/// `E[log(V+γ)] = ψ((n+α)/2) − ψ(α/2) + log γ`.
pub fn expected_log_v_plus_gamma(alpha: f64, gamma: f64, n: u32) -> Result<f64> {
    analytic_moment_v_log(alpha, gamma, n, 0.0, 0.0)
}

/// `Var[log(V+γ)] = ψ′(α/2) − ψ′((n+α)/2)`.
pub fn variance_log_v_plus_gamma(alpha: f64, gamma: f64, n: u32) -> Result<f64> {
    check_alpha_gamma(alpha, gamma)?;
    check_n(n)?;
    Ok(trigamma_unchecked(0.5 * alpha) - trigamma_unchecked(0.5 * (f64::from(n) + alpha)))
}
