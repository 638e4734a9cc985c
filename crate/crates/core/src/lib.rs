//! Small-area estimation under the Fay-Herriot random dispersion model.
//!
//! Each area reports a direct estimate `y_i` together with a variance
//! statistic `V_i` on `n_i` degrees of freedom. The latent area mean `ξ_i`
//! follows a linear model `z_iᵀβ + N(0, τ²)`, and the sampling precision
//! `1/σ_i²` is gamma distributed with shape `α/2` and rate `γ/2`. The
//! predictors shrink `y_i` toward `z_iᵀβ` and, at the same time, `V_i`
//! toward `γ/α`.
//!
//! Modules, from the bottom up:
//!
//! * [`model`]: domain types, shrinkage coefficients, densities and moments
//! * [`sampling`]: seeded, stream-split data generation
//! * [`estimation`]: moment estimators of `(β, τ², α, γ)` and the fitting loop
//! * [`prediction`]: approximated, empirical and exact Bayes predictors and benchmarking
//! * [`uncertainty`]: parametric-bootstrap MSE estimation
//! * [`simulation`]: Monte Carlo experiment engine

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod model;
pub mod numerics;
pub mod prediction;
pub mod sampling;
pub mod simulation;
pub mod special;
pub mod uncertainty;

pub use error::{FhrdError, Result};
pub use estimation::{fit, FitOptions, FitResult, Tau2Residuals};
pub use model::{AreaRecord, LatentState, ModelParams, ShrinkageCoefficients, Theta};
pub use prediction::{BenchmarkWeights, PredictionSet, QuadratureOptions};
pub use sampling::{RngSeed, SyntheticDataset};
pub use simulation::{ExperimentResult, ExperimentSpec};
pub use uncertainty::MseReport;
