//! Monte Carlo experiments: predictor accuracy, sampling distributions of the
//! parameter estimates, and bias of the bootstrap MSE estimator.
//!
//! Every replication draws from its own substream of the experiment seed
//! (`seed → cell → purpose → replication`). Replications run in parallel,
//! results are collected in replication order, and all aggregation is
//! sequential, so a given spec always yields the same numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhrdError, Result};
use crate::estimation::{fit, FitOptions};
use crate::model::ModelParams;
use crate::numerics::KahanSum;
use crate::prediction::{bayes_shrinkage, predict_aeb, QuadratureOptions};
use crate::sampling::{generate_fhrd, DesignRow, RngSeed};
use crate::uncertainty::{mse_aeb, BootstrapConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Table1,
    Table2,
    Table3,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    /// Bias and root MSE of the exact and approximated Bayes predictors at
    /// the true parameters.
    Predictor,
    /// Means and standard deviations of the fitted parameters.
    Estimator,
    /// Relative bias of the bootstrap MSE estimator.
    Mse,
}

impl Which {
    pub fn study(self) -> Option<StudyKind> {
        match self {
            Which::Table1 => Some(StudyKind::Predictor),
            Which::Table2 => Some(StudyKind::Estimator),
            Which::Table3 => Some(StudyKind::Mse),
            Which::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// K = 5000, T = 1000, B = 1000, R = 5000.
    Full,
    /// K = 1000, T = 200, B = 200, R = 1000.
    Desk,
}

/// One parameter configuration. All `m` areas share the degrees of freedom
/// `n`; with a single coefficient the design is intercept-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub m: usize,
    pub tau2: f64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: u32,
}

fn one() -> f64 {
    1.0
}
fn default_beta() -> Vec<f64> {
    vec![10.0]
}
fn default_n() -> u32 {
    10
}

impl CellSpec {
    pub fn new(m: usize, alpha: f64, tau2: f64) -> Self {
        Self { m, tau2, alpha, gamma: 1.0, beta: default_beta(), n: 10 }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.beta.clone(), self.tau2, self.alpha, self.gamma)
    }

    /// Intercept first; further covariates cycle deterministically over a
    /// fixed grid so designs with `p > 1` have full rank.
    pub fn design(&self) -> Vec<DesignRow> {
        let p = self.beta.len();
        (0..self.m)
            .map(|i| {
                let mut z = vec![1.0];
                for k in 1..p {
                    z.push(((i * (k + 1)) % 7) as f64 / 3.0);
                }
                DesignRow { z, n: self.n }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub which: Which,
    /// Required when `which` is `custom`.
    #[serde(default)]
    pub study: Option<StudyKind>,
    pub cells: Vec<CellSpec>,
    /// K for predictor studies, T for estimator and MSE studies.
    pub replications: usize,
    /// R, the replications behind the true MSE of an MSE study.
    #[serde(default)]
    pub truth_replications: usize,
    #[serde(default)]
    pub bootstrap: usize,
    pub seed: u64,
    #[serde(default)]
    pub fit_options: FitOptions,
    #[serde(default)]
    pub quadrature: QuadratureOptions,
}

/// The grid m ∈ {30, 60} × (α, τ²) ∈ {1, 4}².
pub fn standard_cells() -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for m in [30, 60] {
        for (alpha, tau2) in [(1.0, 1.0), (1.0, 4.0), (4.0, 1.0), (4.0, 4.0)] {
            cells.push(CellSpec::new(m, alpha, tau2));
        }
    }
    cells
}

impl ExperimentSpec {
    pub fn preset(which: Which, budget: Budget, seed: u64) -> Result<Self> {
        let full = budget == Budget::Full;
        let (replications, truth_replications, bootstrap) = match which {
            Which::Table1 => (if full { 5000 } else { 1000 }, 0, 0),
            Which::Table2 => (if full { 1000 } else { 200 }, 0, 0),
            Which::Table3 => {
                if full {
                    (1000, 5000, 1000)
                } else {
                    (200, 1000, 200)
                }
            }
            Which::Custom => return Err(FhrdError::InvalidInput("custom studies have no preset".into())),
        };
        Ok(Self {
            which,
            study: which.study(),
            cells: standard_cells(),
            replications,
            truth_replications,
            bootstrap,
            seed,
            fit_options: FitOptions::default(),
            quadrature: QuadratureOptions::default(),
        })
    }

    pub fn study_kind(&self) -> Result<StudyKind> {
        match (self.which.study(), self.study) {
            (Some(k), None) => Ok(k),
            (Some(k), Some(s)) if k == s => Ok(k),
            (Some(_), Some(s)) => Err(FhrdError::InvalidInput(format!("study {s:?} conflicts with {:?}", self.which))),
            (None, Some(s)) => Ok(s),
            (None, None) => Err(FhrdError::InvalidInput("custom experiments need a study kind".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.study_kind()?;
        if self.cells.is_empty() {
            return Err(FhrdError::InvalidInput("cells: at least one cell is required".into()));
        }
        if self.replications == 0 {
            return Err(FhrdError::InvalidInput("replications must be at least 1".into()));
        }
        if kind == StudyKind::Mse && (self.truth_replications == 0 || self.bootstrap == 0) {
            return Err(FhrdError::InvalidInput(
                "truth_replications and bootstrap must be at least 1 for an mse study".into(),
            ));
        }
        self.fit_options.validate()?;
        for (i, c) in self.cells.iter().enumerate() {
            c.params().map_err(|e| FhrdError::InvalidInput(format!("cells[{i}]: {e}")))?;
            if c.m < c.beta.len() + 1 || c.n == 0 {
                return Err(FhrdError::InvalidInput(format!("cells[{i}]: m or n too small")));
            }
        }
        Ok(())
    }
}

/// A Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Mean, standard deviation and their standard errors for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Estimate,
    pub sd: Estimate,
    pub count: usize,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        let nan = Estimate { value: f64::NAN, se: f64::NAN };
        return Summary { mean: nan, sd: nan, count: 0 };
    }
    let nf = n as f64;
    let mean = xs.iter().copied().collect::<KahanSum>().value() / nf;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).collect::<KahanSum>().value();
    let sd = if n > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 };
    Summary {
        mean: Estimate { value: mean, se: sd / nf.sqrt() },
        sd: Estimate { value: sd, se: if n > 1 { sd / (2.0 * (nf - 1.0)).sqrt() } else { f64::NAN } },
        count: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRow {
    pub cell: CellSpec,
    pub bias_bayes: Estimate,
    pub srmse_bayes: Estimate,
    pub bias_ab: Estimate,
    pub srmse_ab: Estimate,
    /// Mean over replications of the per-replication difference of squared
    /// errors, AB minus Bayes; positive when the exact predictor wins.
    pub mse_gap: Estimate,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub cell: CellSpec,
    /// First entry of β̂ (the intercept).
    pub beta: Summary,
    pub tau2: Summary,
    pub alpha: Summary,
    pub gamma: Summary,
    pub failures: usize,
    pub not_converged: usize,
    pub tau2_truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub cell: CellSpec,
    pub mse_true: Estimate,
    pub mse_hat: Estimate,
    /// `100·(mean m̂se − MSE)/MSE`
    pub rb_percent: Estimate,
    pub truth_failures: usize,
    pub estimate_failures: usize,
    pub dropped_bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "lowercase")]
pub enum ExperimentResult {
    Predictor { which: Which, seed: u64, rows: Vec<PredictorRow> },
    Estimator { which: Which, seed: u64, rows: Vec<EstimatorRow> },
    Mse { which: Which, seed: u64, rows: Vec<MseRow> },
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let (which, seed) = (spec.which, spec.seed);
    Ok(match spec.study_kind()? {
        StudyKind::Predictor => ExperimentResult::Predictor { which, seed, rows: run_predictor_study(spec)? },
        StudyKind::Estimator => ExperimentResult::Estimator { which, seed, rows: run_estimator_study(spec)? },
        StudyKind::Mse => ExperimentResult::Mse { which, seed, rows: run_mse_study(spec)? },
    })
}

const PURPOSE_DATA: u64 = 1;
const PURPOSE_TRUTH: u64 = 2;
const PURPOSE_BOOTSTRAP: u64 = 3;

fn stream(spec: &ExperimentSpec, cell: usize, purpose: u64) -> RngSeed {
    RngSeed::new(spec.seed).substream(cell as u64).substream(purpose)
}

/// Square root of a mean of squared errors, with a delta-method SE.
fn root_mean(sq: &[f64]) -> Estimate {
    let s = summarize(sq);
    let root = s.mean.value.sqrt();
    let se = if root > 0.0 { s.mean.se / (2.0 * root) } else { 0.0 };
    Estimate { value: root, se }
}

/// Bias and root MSE of the exact and approximated Bayes predictors with the
/// true parameters, averaged over areas and replications.
pub fn run_predictor_study(spec: &ExperimentSpec) -> Result<Vec<PredictorRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.cells.len());
    for (ci, cell) in spec.cells.iter().enumerate() {
        let params = cell.params()?;
        let design = cell.design();
        let base = stream(spec, ci, PURPOSE_DATA);
        let quad = spec.quadrature;
        // Per replication: area means of (bias B, sq B, bias AB, sq AB).
        let per_rep: Vec<[f64; 4]> = (0..spec.replications)
            .into_par_iter()
            .map(|k| -> Result<[f64; 4]> {
                let data = generate_fhrd(&params, &design, base.substream(k as u64))?;
                let mut acc = [KahanSum::default(); 4];
                for (r, latent) in data.records.iter().zip(&data.latents) {
                    let synth = params.synthetic(&r.z);
                    let b = crate::model::shrinkage(params.theta(), r.v, r.n)?.b;
                    let e = bayes_shrinkage(&params, r, &quad)?;
                    let err_b = synth + (1.0 - e) * (r.y - synth) - latent.xi;
                    let err_ab = synth + (1.0 - b) * (r.y - synth) - latent.xi;
                    acc[0].add(err_b);
                    acc[1].add(err_b * err_b);
                    acc[2].add(err_ab);
                    acc[3].add(err_ab * err_ab);
                }
                let m = data.records.len() as f64;
                Ok(acc.map(|a| a.value() / m))
            })
            .collect::<Result<Vec<_>>>()?;
        let col = |k: usize| -> Vec<f64> { per_rep.iter().map(|r| r[k]).collect() };
        let gap: Vec<f64> = per_rep.iter().map(|r| r[3] - r[1]).collect();
        rows.push(PredictorRow {
            cell: cell.clone(),
            bias_bayes: summarize(&col(0)).mean,
            srmse_bayes: root_mean(&col(1)),
            bias_ab: summarize(&col(2)).mean,
            srmse_ab: root_mean(&col(3)),
            mse_gap: summarize(&gap).mean,
            replications: spec.replications,
        });
    }
    Ok(rows)
}

/// Sampling distribution of `(β̂₀, τ̂², α̂, γ̂)` over fresh datasets.
pub fn run_estimator_study(spec: &ExperimentSpec) -> Result<Vec<EstimatorRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.cells.len());
    for (ci, cell) in spec.cells.iter().enumerate() {
        let params = cell.params()?;
        let design = cell.design();
        let base = stream(spec, ci, PURPOSE_DATA);
        let fits: Vec<Option<crate::estimation::FitResult>> = (0..spec.replications)
            .into_par_iter()
            .map(|k| {
                let data = generate_fhrd(&params, &design, base.substream(k as u64)).ok()?;
                fit(&data.records, &spec.fit_options).ok()
            })
            .collect();
        let ok: Vec<_> = fits.iter().flatten().collect();
        let pick = |f: &dyn Fn(&crate::estimation::FitResult) -> f64| -> Summary {
            summarize(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        rows.push(EstimatorRow {
            cell: cell.clone(),
            beta: pick(&|r| r.params.beta[0]),
            tau2: pick(&|r| r.params.tau2),
            alpha: pick(&|r| r.params.alpha),
            gamma: pick(&|r| r.params.gamma),
            failures: fits.len() - ok.len(),
            not_converged: ok.iter().filter(|r| !r.converged).count(),
            tau2_truncated: ok.iter().filter(|r| r.tau2_truncated).count(),
        });
    }
    Ok(rows)
}

/// Relative bias of the bootstrap MSE estimator for the empirical predictor.
///
/// The true MSE comes from `truth_replications` datasets (fit, predict,
/// squared error against the latent means); the estimator mean from
/// `replications` datasets, each with `bootstrap` replicates. Both are
/// averaged over areas.
pub fn run_mse_study(spec: &ExperimentSpec) -> Result<Vec<MseRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.cells.len());
    for (ci, cell) in spec.cells.iter().enumerate() {
        let params = cell.params()?;
        let design = cell.design();
        let truth_base = stream(spec, ci, PURPOSE_TRUTH);
        let truth: Vec<Option<f64>> = (0..spec.truth_replications)
            .into_par_iter()
            .map(|k| {
                let data = generate_fhrd(&params, &design, truth_base.substream(k as u64)).ok()?;
                let f = fit(&data.records, &spec.fit_options).ok()?;
                let pred = predict_aeb(&f, &data.records, None).ok()?;
                let sq = pred
                    .areas
                    .iter()
                    .zip(&data.latents)
                    .map(|(p, l)| (p.xi_aeb - l.xi).powi(2))
                    .collect::<KahanSum>()
                    .value();
                Some(sq / data.records.len() as f64)
            })
            .collect();

        let data_base = stream(spec, ci, PURPOSE_DATA);
        let boot_base = stream(spec, ci, PURPOSE_BOOTSTRAP);
        let estimates: Vec<Option<(f64, usize)>> = (0..spec.replications)
            .into_par_iter()
            .map(|t| {
                let data = generate_fhrd(&params, &design, data_base.substream(t as u64)).ok()?;
                let f = fit(&data.records, &spec.fit_options).ok()?;
                let config = BootstrapConfig { replicates: spec.bootstrap, seed: boot_base.substream(t as u64) };
                let report = mse_aeb(&f, &data.records, &config, &spec.fit_options).ok()?;
                let mean =
                    report.areas.iter().map(|a| a.mse_aeb).collect::<KahanSum>().value() / report.areas.len() as f64;
                Some((mean, report.dropped))
            })
            .collect();

        let truth_ok: Vec<f64> = truth.iter().flatten().copied().collect();
        let est_ok: Vec<f64> = estimates.iter().flatten().map(|e| e.0).collect();
        let t = summarize(&truth_ok).mean;
        let e = summarize(&est_ok).mean;
        let rb = 100.0 * (e.value - t.value) / t.value;
        let rb_se = 100.0 * ((e.se / t.value).powi(2) + (e.value * t.se / (t.value * t.value)).powi(2)).sqrt();
        rows.push(MseRow {
            cell: cell.clone(),
            mse_true: t,
            mse_hat: e,
            rb_percent: Estimate { value: rb, se: rb_se },
            truth_failures: truth.len() - truth_ok.len(),
            estimate_failures: estimates.len() - est_ok.len(),
            dropped_bootstrap: estimates.iter().flatten().map(|e| e.1).sum(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant_sample() {
        let s = summarize(&[2.0; 10]);
        assert_eq!(s.mean.value, 2.0);
        assert_eq!(s.sd.value, 0.0);
        assert_eq!(s.count, 10);
    }

    #[test]
    fn presets_validate() {
        for w in [Which::Table1, Which::Table2, Which::Table3] {
            for b in [Budget::Full, Budget::Desk] {
                let s = ExperimentSpec::preset(w, b, 1).unwrap();
                s.validate().unwrap();
                assert_eq!(s.cells.len(), 8);
            }
        }
        assert!(ExperimentSpec::preset(Which::Custom, Budget::Desk, 1).is_err());
    }

    #[test]
    fn zero_tau2_predictors_coincide() {
        let mut spec = ExperimentSpec::preset(Which::Table1, Budget::Desk, 5).unwrap();
        spec.cells = vec![CellSpec::new(10, 4.0, 0.0)];
        spec.replications = 20;
        let rows = run_predictor_study(&spec).unwrap();
        assert_eq!(rows[0].srmse_ab, rows[0].srmse_bayes);
        assert_eq!(rows[0].srmse_ab.value, 0.0);
    }
}
