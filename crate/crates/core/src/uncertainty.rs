//! Parametric-bootstrap MSE estimation for the empirical and benchmarked
//! predictors.
//!
//! The MSE of the empirical predictor splits as `g₁₁ − g₁₂ + g₂ − 2g₃`. The
//! leading term has an exactly unbiased plug-in, `G(θ̂, V_i)`; the rest are
//! estimated from one layer of bootstrap samples drawn at the fitted
//! parameters, each re-fitted with the full estimation pipeline.
//!
//! Replicates run in parallel on the current rayon pool. Their results are
//! collected in replicate order and summed sequentially, so the output does
//! not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, FhrdError, Result};
use crate::estimation::{fit, FitOptions, FitResult};
use crate::model::{shrinkage_unchecked, validate_dataset, AreaRecord, ModelParams, Theta};
use crate::numerics::{sum, KahanSum};
use crate::prediction::{benchmark_gap, BenchmarkWeights};
use crate::sampling::{design_of, generate_bootstrap, RngSeed, SyntheticDataset};

/// Highest tolerated fraction of bootstrap replicates whose re-fit fails.
pub const MAX_DROP_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GFunctionValue {
    pub value: f64,
    pub theta_used: Theta,
    pub v: f64,
    pub n: u32,
}

/// `G(θ, v) = (v+γ)/(n−2+α)·(1−B)² + τ²B²`, the conditional MSE of the
/// approximated Bayes predictor.
pub fn g_function(theta: Theta, v: f64, n: u32) -> Result<GFunctionValue> {
    theta.validate()?;
    if !(v.is_finite() && v > 0.0) || n == 0 {
        return Err(domain(format!("invalid area statistics v = {v}, n = {n}")));
    }
    if f64::from(n) + theta.alpha <= 2.0 {
        return Err(domain(format!("G needs n + alpha > 2, got {}", f64::from(n) + theta.alpha)));
    }
    Ok(GFunctionValue { value: g_unchecked(theta, v, n), theta_used: theta, v, n })
}

fn g_unchecked(theta: Theta, v: f64, n: u32) -> f64 {
    let b = shrinkage_unchecked(theta, v, n).b;
    (v + theta.gamma) / (f64::from(n) - 2.0 + theta.alpha) * (1.0 - b) * (1.0 - b) + theta.tau2 * b * b
}

pub fn g11_hat(fit: &FitResult, record: &AreaRecord) -> Result<f64> {
    Ok(g_function(fit.params.theta(), record.v, record.n)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: RngSeed,
}

/// Per-area bootstrap averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapComponents {
    pub g12_star: Vec<f64>,
    pub g2_star: Vec<f64>,
    pub g3_star: Vec<f64>,
    /// Present when benchmark weights were supplied.
    pub j_star: Option<Vec<f64>>,
    pub replicates_used: usize,
    pub dropped: usize,
}

/// Per-area MSE estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaMse {
    pub area_id: String,
    pub g11: f64,
    pub g12: f64,
    pub g2: f64,
    pub g3: f64,
    pub mse_aeb: f64,
    pub squared_gap: Option<f64>,
    pub j_star: Option<f64>,
    pub mse_cab: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub areas: Vec<AreaMse>,
    pub replicates: usize,
    pub replicates_used: usize,
    pub dropped: usize,
    pub seed: RngSeed,
    /// `m·Σw_j²`, reported with benchmark weights; it stays bounded only when
    /// no handful of areas carries most of the weight.
    pub weight_concentration: Option<f64>,
}

// Terms of one replicate for one area: g12, g2, g3, J.
type Terms = [f64; 4];

fn replicate_terms(
    theta_hat: &ModelParams,
    boot: &SyntheticDataset,
    refit: &ModelParams,
    weights: Option<&BenchmarkWeights>,
) -> Result<Vec<Terms>> {
    let th = theta_hat.theta();
    let th_star = refit.theta();
    let min_n = boot.records.iter().map(|r| r.n).min().unwrap_or(0);
    if f64::from(min_n) + th_star.alpha <= 2.0 {
        return Err(FhrdError::MomentUndefined("bootstrap re-fit has n + alpha <= 2".into()));
    }
    let mut terms = Vec::with_capacity(boot.records.len());
    let mut xi_aeb_star = Vec::with_capacity(boot.records.len());
    for (r, latent) in boot.records.iter().zip(&boot.latents) {
        let b = shrinkage_unchecked(th, r.v, r.n).b;
        let b_hat = shrinkage_unchecked(th_star, r.v, r.n).b;
        let synth = theta_hat.synthetic(&r.z);
        let synth_star = refit.synthetic(&r.z);
        let g12 = g_unchecked(th_star, r.v, r.n) - g_unchecked(th, r.v, r.n);
        let d = (b_hat - b) * (r.y - synth) - b_hat * (synth_star - synth);
        let ab_err = (1.0 - b) * r.y + b * synth - latent.xi;
        terms.push([g12, d * d, ab_err * d, 0.0]);
        xi_aeb_star.push(synth_star + (1.0 - b_hat) * (r.y - synth_star));
    }
    if let Some(w) = weights {
        let y_star: Vec<f64> = boot.records.iter().map(|r| r.y).collect();
        let gap = benchmark_gap(&xi_aeb_star, &y_star, w);
        for ((t, xi_hat), latent) in terms.iter_mut().zip(&xi_aeb_star).zip(&boot.latents) {
            t[3] = (xi_hat - latent.xi) * gap;
        }
    }
    if terms.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FhrdError::Numeric("non-finite bootstrap term".into()));
    }
    Ok(terms)
}

/// Bootstrap components with a caller-supplied re-fit of each bootstrap
/// dataset. [`bootstrap_mse_components`] re-runs the full estimation
/// pipeline here.
pub fn bootstrap_components_with<F>(
    params: &ModelParams,
    data: &[AreaRecord],
    config: &BootstrapConfig,
    weights: Option<&BenchmarkWeights>,
    refit: F,
) -> Result<BootstrapComponents>
where
    F: Fn(&[AreaRecord]) -> Result<ModelParams> + Sync,
{
    params.validate()?;
    validate_dataset(data)?;
    if config.replicates == 0 {
        return Err(FhrdError::InvalidInput("at least one bootstrap replicate is required".into()));
    }
    if let Some(w) = weights {
        if w.as_slice().len() != data.len() {
            return Err(FhrdError::InvalidInput("weight count differs from area count".into()));
        }
    }
    let design = design_of(data);
    let per_replicate: Vec<Option<Vec<Terms>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let boot = generate_bootstrap(params, &design, config.seed.substream(b as u64)).ok()?;
            let star = refit(&boot.records).ok()?;
            replicate_terms(params, &boot, &star, weights).ok()
        })
        .collect();

    let m = data.len();
    let mut acc = vec![[KahanSum::default(); 4]; m];
    let mut used = 0usize;
    for terms in per_replicate.iter().flatten() {
        used += 1;
        for (a, t) in acc.iter_mut().zip(terms) {
            for k in 0..4 {
                a[k].add(t[k]);
            }
        }
    }
    let dropped = config.replicates - used;
    if used == 0 || dropped as f64 > MAX_DROP_FRACTION * config.replicates as f64 {
        return Err(FhrdError::Numeric(format!("{dropped} of {} bootstrap re-fits failed", config.replicates)));
    }
    let avg = |k: usize| -> Vec<f64> { acc.iter().map(|a| a[k].value() / used as f64).collect() };
    Ok(BootstrapComponents {
        g12_star: avg(0),
        g2_star: avg(1),
        g3_star: avg(2),
        j_star: weights.map(|_| avg(3)),
        replicates_used: used,
        dropped,
    })
}

pub fn bootstrap_mse_components(
    fit_result: &FitResult,
    data: &[AreaRecord],
    config: &BootstrapConfig,
    options: &FitOptions,
    weights: Option<&BenchmarkWeights>,
) -> Result<BootstrapComponents> {
    bootstrap_components_with(&fit_result.params, data, config, weights, |d| Ok(fit(d, options)?.params))
}

/// Assembles the report from bootstrap components.
pub fn assemble_report(
    fit_result: &FitResult,
    data: &[AreaRecord],
    comps: &BootstrapComponents,
    config: &BootstrapConfig,
    weights: Option<&BenchmarkWeights>,
) -> Result<MseReport> {
    let mut areas = Vec::with_capacity(data.len());
    let bench = match (weights, &comps.j_star) {
        (Some(w), Some(j)) => {
            let xi: Vec<f64> = data
                .iter()
                .map(|r| {
                    let b = shrinkage_unchecked(fit_result.params.theta(), r.v, r.n).b;
                    let s = fit_result.params.synthetic(&r.z);
                    s + (1.0 - b) * (r.y - s)
                })
                .collect();
            let y: Vec<f64> = data.iter().map(|r| r.y).collect();
            let gap = benchmark_gap(&xi, &y, w);
            Some((w, j, gap, w.sum_of_squares()))
        }
        _ => None,
    };
    for (i, r) in data.iter().enumerate() {
        let g11 = g11_hat(fit_result, r)?;
        let (g12, g2, g3) = (comps.g12_star[i], comps.g2_star[i], comps.g3_star[i]);
        let mse_aeb = g11 - g12 + g2 - 2.0 * g3;
        let (squared_gap, j_star, mse_cab) = match bench {
            Some((w, j, gap, ss)) => {
                let wi = w.as_slice()[i];
                let sq = gap * gap;
                let cab = mse_aeb + wi * wi / (ss * ss) * sq + 2.0 * wi / ss * j[i];
                (Some(sq), Some(j[i]), Some(cab))
            }
            None => (None, None, None),
        };
        areas.push(AreaMse { area_id: r.area_id.clone(), g11, g12, g2, g3, mse_aeb, squared_gap, j_star, mse_cab });
    }
    Ok(MseReport {
        areas,
        replicates: config.replicates,
        replicates_used: comps.replicates_used,
        dropped: comps.dropped,
        seed: config.seed,
        weight_concentration: weights.map(|w| data.len() as f64 * w.sum_of_squares()),
    })
}

/// MSE estimates for the empirical predictor.
pub fn mse_aeb(
    fit_result: &FitResult,
    data: &[AreaRecord],
    config: &BootstrapConfig,
    options: &FitOptions,
) -> Result<MseReport> {
    let comps = bootstrap_mse_components(fit_result, data, config, options, None)?;
    assemble_report(fit_result, data, &comps, config, None)
}

/// MSE estimates for both the empirical and the benchmarked predictor; the
/// benchmark cross term shares the bootstrap replicates of the other terms.
pub fn mse_cab(
    fit_result: &FitResult,
    data: &[AreaRecord],
    weights: &BenchmarkWeights,
    config: &BootstrapConfig,
    options: &FitOptions,
) -> Result<MseReport> {
    let comps = bootstrap_mse_components(fit_result, data, config, options, Some(weights))?;
    assemble_report(fit_result, data, &comps, config, Some(weights))
}

/// The bootstrap cross term `J*` for each area.
pub fn j_star(
    fit_result: &FitResult,
    data: &[AreaRecord],
    weights: &BenchmarkWeights,
    config: &BootstrapConfig,
    options: &FitOptions,
) -> Result<Vec<f64>> {
    let comps = bootstrap_mse_components(fit_result, data, config, options, Some(weights))?;
    comps.j_star.ok_or_else(|| FhrdError::Numeric("cross term missing".into()))
}

/// Mean of `G(θ, V)` over the marginal law of `V`, by quadrature.
pub fn expected_g(theta: Theta, n: u32) -> Result<f64> {
    use crate::model::log_marginal_v_density;
    use crate::numerics::quad::{integrate, QuadTolerance};
    g_function(theta, 1.0, n)?;
    // Substitute V = γ·u/(1−u) to map (0, ∞) onto (0, 1).
    let tol = QuadTolerance { rel_tol: 1e-11, abs_tol: 0.0, max_intervals: 2000 };
    let res = integrate(
        |u| {
            if u <= 0.0 || u >= 1.0 {
                return [0.0];
            }
            let v = theta.gamma * u / (1.0 - u);
            let jac = theta.gamma / ((1.0 - u) * (1.0 - u));
            match log_marginal_v_density(theta.alpha, theta.gamma, n, v) {
                Ok(lf) => [g_unchecked(theta, v, n) * lf.exp() * jac],
                Err(_) => [0.0],
            }
        },
        0.0,
        1.0,
        tol,
    )?;
    Ok(sum(res.value))
}
