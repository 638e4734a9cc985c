//! The JSON result document.
//!
//! Computed numbers are written in shortest round-trip form, which parses
//! back to the same `f64`. Direct estimates and variance statistics echo the
//! decimal text of the input file when that text is a valid JSON number.

use fhrd::estimation::FitResult;
use fhrd::uncertainty::MseReport;
use serde::Serialize;
use serde_json::value::RawValue;

#[derive(Debug, Serialize)]
pub struct ResultFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<PredictionOut>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<Vec<MseOut>>,
    pub meta: Meta,
}

#[derive(Debug, Serialize)]
pub struct FitOut {
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// True when the parameters came from `--params` rather than a fit.
    pub supplied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
    pub ols_beta: Vec<f64>,
    pub tau2_raw: f64,
    pub tau2_truncated: bool,
    pub alpha_fallback_used: bool,
    pub alpha_at_bound: bool,
    pub profile_solve_used: bool,
    pub small_dof_warning: bool,
}

impl From<&FitResult> for FitOut {
    fn from(f: &FitResult) -> Self {
        Self {
            beta: f.params.beta.clone(),
            tau2: f.params.tau2,
            alpha: f.params.alpha,
            gamma: f.params.gamma,
            supplied: false,
            diagnostics: Some(Diagnostics {
                iterations: f.iterations,
                converged: f.converged,
                residual_norm: f.residual_norm,
                ols_beta: f.ols_beta.clone(),
                tau2_raw: f.tau2_raw,
                tau2_truncated: f.tau2_truncated,
                alpha_fallback_used: f.alpha_fallback_used,
                alpha_at_bound: f.alpha_at_bound,
                profile_solve_used: f.profile_solve_used,
                small_dof_warning: f.small_dof_warning,
            }),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PredictionOut {
    pub area_id: String,
    pub y: Box<RawValue>,
    pub v: Box<RawValue>,
    pub synthetic: f64,
    pub b_i: f64,
    pub xi_aeb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_i: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_bayes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_cab: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MseOut {
    pub area_id: String,
    pub g11: f64,
    pub g12: f64,
    pub g2: f64,
    pub g3: f64,
    pub mse_aeb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub squared_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_cab: Option<f64>,
}

impl MseOut {
    pub fn from_report(r: &MseReport) -> Vec<Self> {
        r.areas
            .iter()
            .map(|a| MseOut {
                area_id: a.area_id.clone(),
                g11: a.g11,
                g12: a.g12,
                g2: a.g2,
                g3: a.g3,
                mse_aeb: a.mse_aeb,
                squared_gap: a.squared_gap,
                j_star: a.j_star,
                mse_cab: a.mse_cab,
            })
            .collect()
    }
}

#[derive(Debug, Serialize)]
pub struct Meta {
    pub command: &'static str,
    pub version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped_replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_concentration: Option<f64>,
    pub warnings: Vec<String>,
}

impl Meta {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: None,
            replicates: None,
            replicates_used: None,
            dropped_replicates: None,
            weight_concentration: None,
            warnings: Vec::new(),
        }
    }
}

/// The input text when it is a JSON number, else the value itself.
pub fn echo_number(text: &str, value: f64) -> Box<RawValue> {
    let json_number =
        text.parse::<f64>().ok() == Some(value) && serde_json::from_str::<serde_json::Number>(text).is_ok();
    if json_number {
        if let Ok(raw) = RawValue::from_string(text.to_string()) {
            return raw;
        }
    }
    // Finite input values always serialize.
    RawValue::from_string(serde_json::to_string(&value).unwrap_or_else(|_| "null".into()))
        .unwrap_or_else(|_| RawValue::from_string("null".into()).expect("null is valid JSON"))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"));
    s.push('\n');
    s
}
