//! Command-line front end for FHRD small-area estimation: fitting,
//! prediction, bootstrap MSE, data generation and simulation studies.

pub mod error;
pub mod input;
pub mod output;
pub mod simulate;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fhrd::estimation::{fit, FitOptions, FitResult, Tau2Residuals};
use fhrd::model::ModelParams;
use fhrd::prediction::{benchmark_cab, predict_with_params, BenchmarkWeights, QuadratureOptions};
use fhrd::sampling::{generate_fhrd, DesignRow, RngSeed};
use fhrd::simulation::Which;
use fhrd::uncertainty::{mse_aeb, mse_cab, BootstrapConfig};
use rand::Rng;

use error::input;
pub use error::{CliError, Result};
use input::{read_dataset, read_params, read_weights, Dataset};
use output::{echo_number, to_json, FitOut, Meta, MseOut, PredictionOut, ResultFile};
use simulate::ExperimentFile;

/// `m·Σw²` above this value triggers a warning: most of the benchmark
/// weight then sits on a few areas.
pub const WEIGHT_CONCENTRATION_WARN: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "fhrd", version, about = "Small-area estimation under the Fay-Herriot random dispersion model")]
pub struct Cli {
    /// Worker threads for bootstrap and simulation (default: all cores)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model parameters
    Fit(FitCmd),
    /// Fit and predict area means
    Predict(PredictCmd),
    /// Fit, predict and estimate the MSE of each prediction by parametric bootstrap
    Mse(MseCmd),
    /// Run a simulation study
    Simulate(SimulateCmd),
    /// Write a synthetic dataset drawn from the model
    Generate(GenerateCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResidualsArg {
    Ols,
    Gls,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header area_id,y,v,n,z1,...,zp
    pub data: PathBuf,
    /// Relative tolerance of the alpha/gamma iteration
    #[arg(long)]
    pub tol: Option<f64>,
    /// Maximum alpha/gamma sweeps
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Regression residuals behind the tau2 estimate
    #[arg(long, value_enum)]
    pub tau2_residuals: Option<ResidualsArg>,
    /// Output file (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Also compute the exact Bayes predictor by quadrature
    #[arg(long)]
    pub bayes: bool,
    /// Relative tolerance of the quadrature
    #[arg(long)]
    pub quad_tol: Option<f64>,
    /// Weights CSV (area_id,w) for benchmarked predictions
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// JSON file with beta, tau2, alpha, gamma to use instead of fitting
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MseCmd {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Weights CSV (area_id,w); adds the MSE of the benchmarked predictor
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Table1,
    Table2,
    Table3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Gnuplot,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    /// Experiment file (TOML, or JSON by extension)
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Reduced replication budget
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateCmd {
    /// JSON file with beta, tau2, alpha, gamma
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub m: usize,
    /// Degrees of freedom of every area, or `lo..hi` for a uniform draw per area
    #[arg(long, default_value = "10")]
    pub n: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command produced: the text for `--out` or stdout.
#[derive(Debug)]
pub struct Output {
    pub text: String,
    pub path: Option<PathBuf>,
    pub warnings: Vec<String>,
}

impl Output {
    pub fn emit(&self) -> Result<()> {
        match &self.path {
            Some(p) => std::fs::write(p, &self.text).map_err(|e| input(format!("{}: {e}", p.display()))),
            None => {
                use std::io::Write;
                let mut out = std::io::stdout().lock();
                out.write_all(self.text.as_bytes())?;
                Ok(())
            }
        }
    }
}

/// Runs a parsed command on a pool of `--workers` threads.
pub fn run(cli: Cli) -> Result<Output> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(input("--workers must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| CliError::Numeric(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Fit(c) => cmd_fit(&c),
        Command::Predict(c) => cmd_predict(&c),
        Command::Mse(c) => cmd_mse(&c),
        Command::Simulate(c) => cmd_simulate(&c),
        Command::Generate(c) => cmd_generate(&c),
    })
}

fn fit_options(a: &FitArgs) -> Result<FitOptions> {
    let mut o = FitOptions::default();
    if let Some(t) = a.tol {
        o.tol = t;
    }
    if let Some(k) = a.max_iter {
        o.max_iter = k;
    }
    if let Some(r) = a.tau2_residuals {
        o.tau2_residuals = match r {
            ResidualsArg::Ols => Tau2Residuals::Ols,
            ResidualsArg::Gls => Tau2Residuals::Gls,
        };
    }
    o.validate()?;
    Ok(o)
}

fn fit_warnings(f: &FitResult, warnings: &mut Vec<String>) {
    if !f.converged {
        warnings.push(format!("alpha/gamma iteration stopped after {} sweeps without converging", f.iterations));
    }
    if f.small_dof_warning {
        warnings.push("few areas relative to covariates; estimates are unstable".into());
    }
    if f.tau2_truncated {
        warnings.push(format!("tau2 estimate {} truncated at its floor", f.tau2_raw));
    }
    if f.alpha_at_bound {
        warnings.push("alpha estimate at the bound of its search range".into());
    }
}

fn fit_dataset(a: &FitArgs, data: &Dataset, meta: &mut Meta) -> Result<FitResult> {
    let f = fit(&data.records, &fit_options(a)?)?;
    fit_warnings(&f, &mut meta.warnings);
    Ok(f)
}

fn check_weights(w: &BenchmarkWeights, meta: &mut Meta) {
    let c = w.as_slice().len() as f64 * w.sum_of_squares();
    meta.weight_concentration = Some(c);
    if c > WEIGHT_CONCENTRATION_WARN {
        meta.warnings.push(format!(
            "benchmark weights are concentrated (m*sum(w^2) = {c}); the benchmarked MSE approximation assumes spread weights"
        ));
    }
}

fn finish(file: ResultFile, out: &Option<PathBuf>) -> Output {
    Output { text: to_json(&file), path: out.clone(), warnings: file.meta.warnings.clone() }
}

pub fn cmd_fit(c: &FitCmd) -> Result<Output> {
    let data = read_dataset(&c.fit.data)?;
    let mut meta = Meta::new("fit");
    let f = fit_dataset(&c.fit, &data, &mut meta)?;
    Ok(finish(ResultFile { fit: Some(FitOut::from(&f)), predictions: None, mse: None, meta }, &c.fit.out))
}

fn prediction_rows(
    params: &ModelParams,
    data: &Dataset,
    bayes: Option<&QuadratureOptions>,
    weights: Option<&BenchmarkWeights>,
) -> Result<Vec<PredictionOut>> {
    let set = predict_with_params(params, &data.records, bayes)?;
    let cab = weights.map(|w| benchmark_cab(&set, w)).transpose()?;
    Ok(set
        .areas
        .iter()
        .enumerate()
        .map(|(i, a)| PredictionOut {
            area_id: a.area_id.clone(),
            y: echo_number(&data.y_text[i], data.records[i].y),
            v: echo_number(&data.v_text[i], data.records[i].v),
            synthetic: a.synthetic,
            b_i: a.b,
            xi_aeb: a.xi_aeb,
            e_i: a.e,
            xi_bayes: a.xi_bayes,
            delta_cab: cab.as_ref().map(|d| d[i]),
        })
        .collect())
}

pub fn cmd_predict(c: &PredictCmd) -> Result<Output> {
    let data = read_dataset(&c.fit.data)?;
    let mut meta = Meta::new("predict");
    let weights = c.benchmark.as_ref().map(|p| read_weights(p, &data)).transpose()?;
    if let Some(w) = &weights {
        check_weights(w, &mut meta);
    }
    let (params, fit_out) = match &c.params {
        Some(p) => {
            let params = read_params(p)?;
            let out = FitOut {
                beta: params.beta.clone(),
                tau2: params.tau2,
                alpha: params.alpha,
                gamma: params.gamma,
                supplied: true,
                diagnostics: None,
            };
            (params, out)
        }
        None => {
            let f = fit_dataset(&c.fit, &data, &mut meta)?;
            (f.params.clone(), FitOut::from(&f))
        }
    };
    let mut quad = QuadratureOptions::default();
    if let Some(t) = c.quad_tol {
        if !(t > 0.0 && t < 1.0) {
            return Err(input(format!("--quad-tol must lie in (0, 1), got {t}")));
        }
        quad.rel_tol = t;
    }
    let rows = prediction_rows(&params, &data, c.bayes.then_some(&quad), weights.as_ref())?;
    Ok(finish(ResultFile { fit: Some(fit_out), predictions: Some(rows), mse: None, meta }, &c.fit.out))
}

pub fn cmd_mse(c: &MseCmd) -> Result<Output> {
    if c.replicates == 0 {
        return Err(input("--replicates must be at least 1"));
    }
    let data = read_dataset(&c.fit.data)?;
    let mut meta = Meta::new("mse");
    let weights = c.benchmark.as_ref().map(|p| read_weights(p, &data)).transpose()?;
    if let Some(w) = &weights {
        check_weights(w, &mut meta);
    }
    let opts = fit_options(&c.fit)?;
    let f = fit_dataset(&c.fit, &data, &mut meta)?;
    let config = BootstrapConfig { replicates: c.replicates, seed: RngSeed::new(c.seed) };
    let report = match &weights {
        Some(w) => mse_cab(&f, &data.records, w, &config, &opts)?,
        None => mse_aeb(&f, &data.records, &config, &opts)?,
    };
    meta.seed = Some(c.seed);
    meta.replicates = Some(c.replicates);
    meta.replicates_used = Some(report.replicates_used);
    meta.dropped_replicates = Some(report.dropped);
    if report.dropped > 0 {
        meta.warnings.push(format!("{} of {} bootstrap re-fits failed and were dropped", report.dropped, c.replicates));
    }
    let rows = prediction_rows(&f.params, &data, None, weights.as_ref())?;
    let file = ResultFile {
        fit: Some(FitOut::from(&f)),
        predictions: Some(rows),
        mse: Some(MseOut::from_report(&report)),
        meta,
    };
    Ok(finish(file, &c.fit.out))
}

pub fn cmd_simulate(c: &SimulateCmd) -> Result<Output> {
    let file = match (&c.spec, c.preset) {
        (Some(p), _) => ExperimentFile::read(p)?,
        (None, Some(p)) => ExperimentFile::preset(match p {
            PresetArg::Table1 => Which::Table1,
            PresetArg::Table2 => Which::Table2,
            PresetArg::Table3 => Which::Table3,
        }),
        (None, None) => return Err(input("give an experiment file or --preset")),
    };
    let spec = file.resolve(c.desk, c.seed)?;
    let result = fhrd::simulation::run(&spec)?;
    let text = match c.format {
        FormatArg::Json => to_json(&serde_json::json!({ "spec": spec, "result": result })),
        FormatArg::Csv => simulate::table(&result).to_csv()?,
        FormatArg::Gnuplot => simulate::table(&result).to_gnuplot(),
    };
    Ok(Output { text, path: c.out.clone(), warnings: Vec::new() })
}

fn parse_n(spec: &str) -> Result<(u32, u32)> {
    let bad = || input(format!("--n must be a positive integer or lo..hi, got {spec:?}"));
    let (lo, hi) = match spec.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let n = spec.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if lo == 0 || hi < lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Draws a dataset. Covariates beyond the intercept and per-area degrees of
/// freedom come from a stream separate from the model draws.
pub fn cmd_generate(c: &GenerateCmd) -> Result<Output> {
    let params = read_params(&c.params)?;
    if c.m == 0 {
        return Err(input("--m must be at least 1"));
    }
    let (lo, hi) = parse_n(&c.n)?;
    let root = RngSeed::new(c.seed);
    let mut design_rng = root.substream(u64::MAX).rng();
    let design: Vec<DesignRow> = (0..c.m)
        .map(|_| {
            let mut z = vec![1.0];
            for _ in 1..params.beta.len() {
                z.push(design_rng.random::<f64>());
            }
            let n = if lo == hi { lo } else { design_rng.random_range(lo..=hi) };
            DesignRow { z, n }
        })
        .collect();
    let data = generate_fhrd(&params, &design, root.substream(0))?;
    let p = params.beta.len();
    let mut text = String::from("area_id,y,v,n");
    for k in 1..=p {
        let _ = write!(text, ",z{k}");
    }
    text.push('\n');
    for r in &data.records {
        let _ = write!(text, "{},{},{},{}", r.area_id, r.y, r.v, r.n);
        for z in &r.z {
            let _ = write!(text, ",{z}");
        }
        text.push('\n');
    }
    Ok(Output { text, path: c.out.clone(), warnings: Vec::new() })
}
