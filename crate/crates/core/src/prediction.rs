//! Area-mean predictors.
//!
//! The approximated Bayes predictor uses the closed-form weight `B_i`; the
//! exact Bayes predictor replaces it by the posterior mean `E_i` of
//! `1/(τ²η+1)`, a one-dimensional integral over the precision `η`.

use serde::{Deserialize, Serialize};

use crate::error::{FhrdError, Result};
use crate::estimation::FitResult;
use crate::model::{shrinkage, validate_dataset, AreaRecord, ModelParams};
use crate::numerics::quad::{integrate_with_breaks, QuadTolerance};
use crate::numerics::sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    /// The integration range is `[0, s + truncation_sd·√s + truncation_offset]`
    /// in the gamma-kernel variable with shape `s`.
    pub truncation_sd: f64,
    pub truncation_offset: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, truncation_sd: 12.0, truncation_offset: 20.0, max_intervals: 400 }
    }
}

/// Predictions for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPrediction {
    pub area_id: String,
    pub y: f64,
    /// `z_iᵀβ̂`
    pub synthetic: f64,
    pub b: f64,
    /// Approximated Bayes predictor at the fitted parameters.
    pub xi_aeb: f64,
    /// Posterior shrinkage `E_i`, when the exact predictor was requested.
    pub e: Option<f64>,
    pub xi_bayes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub areas: Vec<AreaPrediction>,
}

impl PredictionSet {
    pub fn xi_aeb(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.xi_aeb).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.y).collect()
    }
}

/// Nonnegative benchmark weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkWeights {
    w: Vec<f64>,
}

impl BenchmarkWeights {
    /// Accepts weights whose sum is within `1e-12` of one.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        Self::check(&w, 1e-12)?;
        Ok(Self { w })
    }

    /// Accepts weights whose sum is within `tol` of one and rescales them to
    /// sum to one.
    pub fn normalized(w: Vec<f64>, tol: f64) -> Result<Self> {
        let total = Self::check(&w, tol)?;
        Ok(Self { w: w.into_iter().map(|x| x / total).collect() })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::normalized(vec![1.0 / m as f64; m], 1e-12)
    }

    fn check(w: &[f64], tol: f64) -> Result<f64> {
        if w.is_empty() {
            return Err(FhrdError::InvalidInput("no benchmark weights".into()));
        }
        if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(FhrdError::InvalidInput(format!("weight {i} is {x}; weights must be nonnegative")));
        }
        let total = sum(w.iter().copied());
        if (total - 1.0).abs() > tol {
            return Err(FhrdError::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(total)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn sum_of_squares(&self) -> f64 {
        sum(self.w.iter().map(|x| x * x))
    }
}

/// `z'β + (1 − B)(y − z'β)`.
pub fn predict_ab(params: &ModelParams, record: &AreaRecord) -> Result<f64> {
    let b = shrinkage(params.theta(), record.v, record.n)?.b;
    let synth = params.synthetic(&record.z);
    Ok(synth + (1.0 - b) * (record.y - synth))
}

/// Posterior mean of `1/(τ²η + 1)` given `(y, V)`.
pub fn bayes_shrinkage(params: &ModelParams, record: &AreaRecord, quad: &QuadratureOptions) -> Result<f64> {
    params.validate()?;
    record.validate()?;
    if params.tau2 == 0.0 {
        return Ok(1.0);
    }
    let s = 0.5 * (f64::from(record.n) + 1.0 + params.alpha);
    let c = record.v + params.gamma;
    let r = record.y - params.synthetic(&record.z);
    let r2 = r * r;
    let tau2 = params.tau2;

    // η = 2t/c turns the η-kernel into t^(s−1) e^(−t); what remains is
    // bounded by one.
    let log_kernel = |t: f64| -> (f64, f64) {
        let eta = 2.0 * t / c;
        let d = 1.0 + tau2 * eta;
        ((s - 1.0) * t.ln() - t - 0.5 * d.ln() - eta * r2 / (2.0 * d), d)
    };
    let upper = s + quad.truncation_sd * s.sqrt() + quad.truncation_offset;

    // The log-kernel rises below (s−1)/g0 and falls above s−1, so every mode
    // lies in between. A large residual pushes the mode far below s−1.
    let g0 = 1.0 + (tau2 + r2) / c;
    let peak = log_kernel_peak(|t| log_kernel(t).0, (s - 1.0) / g0, s - 1.0);
    let shift = log_kernel(peak).0;
    let mut breaks = vec![0.0];
    let mut t = peak;
    while t < s - 1.0 {
        breaks.push(t);
        t *= 4.0;
    }
    breaks.push(s - 1.0);
    breaks.push(upper);

    let tol = QuadTolerance { rel_tol: quad.rel_tol, abs_tol: 0.0, max_intervals: quad.max_intervals };
    let res = integrate_with_breaks(
        |t| {
            if t <= 0.0 {
                return [0.0, 0.0];
            }
            let (lk, d) = log_kernel(t);
            let k = (lk - shift).exp();
            [k / d, k]
        },
        &breaks,
        tol,
    )?;
    let [num, den] = res.value;
    if !(den > 0.0 && num.is_finite()) {
        return Err(FhrdError::Numeric(format!("shrinkage integral degenerate: {num} / {den}")));
    }
    Ok((num / den).min(1.0))
}

/// Maximizer of `f` on `[lo, hi]`: a geometric grid, then golden-section
/// search in `log t` between the neighbours of the best grid point.
fn log_kernel_peak(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return hi.max(f64::MIN_POSITIVE);
    }
    const GRID: usize = 48;
    let (a, b) = (lo.max(f64::MIN_POSITIVE).ln(), hi.ln());
    let h = (b - a) / GRID as f64;
    let best = (0..=GRID).map(|j| (j, f((a + h * j as f64).exp()))).fold((0, f64::NEG_INFINITY), |acc, x| {
        if x.1 > acc.1 {
            x
        } else {
            acc
        }
    });
    let (mut x0, mut x1) = (a + h * best.0.saturating_sub(1) as f64, a + h * (best.0 + 1).min(GRID) as f64);
    const R: f64 = 0.618_033_988_749_894_9;
    let g = |x: f64| f(x.exp());
    let (mut c, mut d) = (x1 - R * (x1 - x0), x0 + R * (x1 - x0));
    let (mut fc, mut fd) = (g(c), g(d));
    for _ in 0..40 {
        if fc >= fd {
            x1 = d;
            d = c;
            fd = fc;
            c = x1 - R * (x1 - x0);
            fc = g(c);
        } else {
            x0 = c;
            c = d;
            fc = fd;
            d = x0 + R * (x1 - x0);
            fd = g(d);
        }
    }
    let x = if fc >= fd { c } else { d };
    if g(x) >= best.1 {
        x.exp()
    } else {
        (a + h * best.0 as f64).exp()
    }
}

/// `z'β + (1 − E)(y − z'β)` with the exact posterior shrinkage `E`.
pub fn predict_bayes(params: &ModelParams, record: &AreaRecord, quad: &QuadratureOptions) -> Result<f64> {
    let e = bayes_shrinkage(params, record, quad)?;
    let synth = params.synthetic(&record.z);
    Ok(synth + (1.0 - e) * (record.y - synth))
}

/// Predictions at fixed parameters; `bayes` adds the quadrature-based predictor.
pub fn predict_with_params(
    params: &ModelParams,
    data: &[AreaRecord],
    bayes: Option<&QuadratureOptions>,
) -> Result<PredictionSet> {
    params.validate()?;
    let p = validate_dataset(data)?;
    if p != params.beta.len() {
        return Err(FhrdError::InvalidInput(format!("{p} covariates but {} coefficients", params.beta.len())));
    }
    let areas = data
        .iter()
        .map(|r| {
            let b = shrinkage(params.theta(), r.v, r.n)?.b;
            let synthetic = params.synthetic(&r.z);
            let (e, xi_bayes) = match bayes {
                Some(q) => {
                    let e = bayes_shrinkage(params, r, q)?;
                    (Some(e), Some(synthetic + (1.0 - e) * (r.y - synthetic)))
                }
                None => (None, None),
            };
            Ok(AreaPrediction {
                area_id: r.area_id.clone(),
                y: r.y,
                synthetic,
                b,
                xi_aeb: synthetic + (1.0 - b) * (r.y - synthetic),
                e,
                xi_bayes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet { areas })
}

/// The approximated empirical Bayes predictor: [`predict_ab`] at the fitted
/// parameters. No re-fitting happens here.
pub fn predict_aeb(fit: &FitResult, data: &[AreaRecord], bayes: Option<&QuadratureOptions>) -> Result<PredictionSet> {
    predict_with_params(&fit.params, data, bayes)
}

/// `ȳ_w − Σ w_j ξ_j`.
pub fn benchmark_gap(xi: &[f64], y: &[f64], w: &BenchmarkWeights) -> f64 {
    let w = w.as_slice();
    sum(w.iter().zip(y).map(|(a, b)| a * b)) - sum(w.iter().zip(xi).map(|(a, b)| a * b))
}

/// Adds `w_i/Σw_j² · (ȳ_w − Σ w_j ξ_j)` to each prediction, so the weighted
/// total of the result equals `ȳ_w`.
pub fn benchmark_adjust(xi: &[f64], y: &[f64], w: &BenchmarkWeights) -> Result<Vec<f64>> {
    let m = xi.len();
    if y.len() != m || w.as_slice().len() != m {
        return Err(FhrdError::InvalidInput(format!(
            "benchmark: {m} predictions, {} direct estimates, {} weights",
            y.len(),
            w.as_slice().len()
        )));
    }
    let ss = w.sum_of_squares();
    if !(ss > 0.0) {
        return Err(FhrdError::InvalidInput("benchmark weights are all zero".into()));
    }
    let gap = benchmark_gap(xi, y, w);
    let out: Vec<f64> = xi.iter().zip(w.as_slice()).map(|(x, wi)| x + wi / ss * gap).collect();

    let target = sum(w.as_slice().iter().zip(y).map(|(a, b)| a * b));
    let got = sum(w.as_slice().iter().zip(&out).map(|(a, b)| a * b));
    if (got - target).abs() > 1e-10 * target.abs().max(1.0) {
        return Err(FhrdError::Numeric(format!("benchmark constraint off: {got} vs {target}")));
    }
    Ok(out)
}

pub fn benchmark_cab(predictions: &PredictionSet, weights: &BenchmarkWeights) -> Result<Vec<f64>> {
    benchmark_adjust(&predictions.xi_aeb(), &predictions.y(), weights)
}
