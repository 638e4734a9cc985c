//! Experiment configuration files and tabular output of study results.

use std::path::Path;

use fhrd::estimation::FitOptions;
use fhrd::prediction::QuadratureOptions;
use fhrd::simulation::{Budget, CellSpec, Estimate, ExperimentResult, ExperimentSpec, StudyKind, Summary, Which};
use serde::Deserialize;

use crate::error::{input, Result};

/// An experiment file. For the table presets every field but `which` is
/// optional and overrides the preset; custom studies need `study`, `cells`
/// and `replications`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub which: Which,
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub study: Option<StudyKind>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cells: Option<Vec<CellSpec>>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub truth_replications: Option<usize>,
    #[serde(default)]
    pub bootstrap: Option<usize>,
    #[serde(default)]
    pub fit_options: Option<FitOptions>,
    #[serde(default)]
    pub quadrature: Option<QuadratureOptions>,
}

impl ExperimentFile {
    pub fn preset(which: Which) -> Self {
        Self {
            which,
            budget: None,
            study: None,
            seed: None,
            cells: None,
            replications: None,
            truth_replications: None,
            bootstrap: None,
            fit_options: None,
            quadrature: None,
        }
    }

    /// Reads TOML or JSON, chosen by extension (`.json`, else TOML).
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
        }
    }

    /// The experiment to run. `desk` and `seed` from the command line take
    /// precedence over the file.
    pub fn resolve(self, desk: bool, seed: Option<u64>) -> Result<ExperimentSpec> {
        let budget = if desk { Budget::Desk } else { self.budget.unwrap_or(Budget::Full) };
        let seed = seed.or(self.seed).unwrap_or(1);
        let mut spec = match self.which {
            Which::Custom => ExperimentSpec {
                which: Which::Custom,
                study: self.study,
                cells: self.cells.clone().ok_or_else(|| input("cells: required for a custom study"))?,
                replications: self.replications.ok_or_else(|| input("replications: required for a custom study"))?,
                truth_replications: 0,
                bootstrap: 0,
                seed,
                fit_options: FitOptions::default(),
                quadrature: QuadratureOptions::default(),
            },
            which => ExperimentSpec::preset(which, budget, seed)?,
        };
        if self.which != Which::Custom {
            spec.study = self.study.or(spec.study);
            if let Some(c) = self.cells {
                spec.cells = c;
            }
            if let Some(r) = self.replications {
                spec.replications = r;
            }
        }
        if let Some(r) = self.truth_replications {
            spec.truth_replications = r;
        }
        if let Some(b) = self.bootstrap {
            spec.bootstrap = b;
        }
        if let Some(f) = self.fit_options {
            spec.fit_options = f;
        }
        if let Some(q) = self.quadrature {
            spec.quadrature = q;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One row per cell, every aggregate followed by its Monte Carlo SE.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn cell_columns(c: &CellSpec) -> Vec<String> {
    vec![c.m.to_string(), c.alpha.to_string(), c.tau2.to_string(), c.gamma.to_string(), c.n.to_string()]
}

fn est(e: Estimate) -> [String; 2] {
    [e.value.to_string(), e.se.to_string()]
}

fn summary(s: &Summary) -> [String; 4] {
    [s.mean.value.to_string(), s.mean.se.to_string(), s.sd.value.to_string(), s.sd.se.to_string()]
}

pub fn table(result: &ExperimentResult) -> Table {
    let mut header: Vec<String> = ["m", "alpha", "tau2", "gamma", "n"].map(String::from).to_vec();
    let mut rows = Vec::new();
    let names = |xs: &[&str]| xs.iter().flat_map(|x| [x.to_string(), format!("{x}_se")]).collect::<Vec<_>>();
    match result {
        ExperimentResult::Predictor { rows: rs, .. } => {
            header.extend(names(&["bias_bayes", "srmse_bayes", "bias_ab", "srmse_ab", "mse_gap"]));
            header.push("replications".into());
            for r in rs {
                let mut row = cell_columns(&r.cell);
                for e in [r.bias_bayes, r.srmse_bayes, r.bias_ab, r.srmse_ab, r.mse_gap] {
                    row.extend(est(e));
                }
                row.push(r.replications.to_string());
                rows.push(row);
            }
        }
        ExperimentResult::Estimator { rows: rs, .. } => {
            for p in ["beta", "tau2", "alpha", "gamma"] {
                header.extend(names(&[&format!("{p}_mean"), &format!("{p}_sd")]));
            }
            header.extend(["count", "failures", "not_converged", "tau2_truncated"].map(String::from));
            for r in rs {
                let mut row = cell_columns(&r.cell);
                for s in [&r.beta, &r.tau2, &r.alpha, &r.gamma] {
                    row.extend(summary(s));
                }
                row.extend([r.beta.count, r.failures, r.not_converged, r.tau2_truncated].map(|x| x.to_string()));
                rows.push(row);
            }
        }
        ExperimentResult::Mse { rows: rs, .. } => {
            header.extend(names(&["mse_true", "mse_hat", "rb_percent"]));
            header.extend(["truth_failures", "estimate_failures", "dropped_bootstrap"].map(String::from));
            for r in rs {
                let mut row = cell_columns(&r.cell);
                for e in [r.mse_true, r.mse_hat, r.rb_percent] {
                    row.extend(est(e));
                }
                row.extend([r.truth_failures, r.estimate_failures, r.dropped_bootstrap].map(|x| x.to_string()));
                rows.push(row);
            }
        }
    }
    Table { header, rows }
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| input(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| input(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| input(e.to_string()))
    }

    /// Whitespace-separated columns with a `#` header line, for gnuplot.
    pub fn to_gnuplot(&self) -> String {
        let mut s = format!("# {}\n", self.header.join(" "));
        for r in &self.rows {
            s.push_str(&r.join(" "));
            s.push('\n');
        }
        s
    }
}
