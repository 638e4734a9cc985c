//! Seeded random generation of model datasets.
//!
//! Every area of every replicate draws from its own ChaCha8 stream. The key
//! is the user seed and the stream id is a hash of the replicate and area
//! indices, so output depends only on `(params, design, seed)` and never on
//! how work is scheduled across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{AreaRecord, LatentState, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    /// A sibling stream for child `index` of this stream.
    pub fn substream(&self, index: u64) -> Self {
        let mixed = splitmix64(splitmix64(self.stream_id) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93));
        Self { seed: self.seed, stream_id: mixed }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Generated areas with the latent states that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub records: Vec<AreaRecord>,
    pub latents: Vec<LatentState>,
    pub params_used: ModelParams,
}

/// Covariates and degrees of freedom of one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub z: Vec<f64>,
    pub n: u32,
}

pub fn design_of(data: &[AreaRecord]) -> Vec<DesignRow> {
    data.iter().map(|r| DesignRow { z: r.z.clone(), n: r.n }).collect()
}

/// Intercept-only design with common degrees of freedom.
pub fn intercept_design(m: usize, n: u32) -> Vec<DesignRow> {
    vec![DesignRow { z: vec![1.0], n }; m]
}

pub fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Gamma draw with the given shape and scale (mean `shape·scale`).
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(domain(format!("gamma shape must be positive, got {shape}")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(domain(format!("gamma scale must be positive, got {scale}")));
    }
    Ok(scale * standard_gamma(rng, shape))
}

pub fn sample_chisq<R: Rng + ?Sized>(rng: &mut R, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(domain("chi-square degrees of freedom must be at least 1"));
    }
    sample_gamma(rng, 0.5 * f64::from(df), 2.0)
}

// Marsaglia and Tsang's squeeze method; shapes below one are boosted to
// shape + 1 and scaled back by U^(1/shape).
fn standard_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = standard_gamma(rng, shape + 1.0);
        let u: f64 = rng.sample(Open01);
        return g * (u.ln() / shape).exp();
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draws one area: `η`, then `ξ`, then `y`, then `V`.
fn draw_area(params: &ModelParams, row: &DesignRow, seed: RngSeed) -> Result<(f64, f64, LatentState)> {
    let mut rng = seed.rng();
    let eta = sample_gamma(&mut rng, 0.5 * params.alpha, 2.0 / params.gamma)?;
    let sigma2 = 1.0 / eta;
    let mean = params.synthetic(&row.z);
    let xi = if params.tau2 == 0.0 { mean } else { mean + params.tau2.sqrt() * sample_standard(&mut rng) };
    let y = xi + sigma2.sqrt() * sample_standard(&mut rng);
    let v = sigma2 * sample_chisq(&mut rng, row.n)?;
    if !(sigma2.is_finite() && sigma2 > 0.0 && v > 0.0 && v.is_finite()) {
        // Only reachable for extreme α/γ where η under- or overflows.
        return Err(crate::error::FhrdError::Numeric(format!("degenerate draw: sigma2 = {sigma2}, v = {v}")));
    }
    Ok((y, v, LatentState { xi, sigma2 }))
}

/// Generates a dataset from the model. Area `i` draws from `seed.substream(i)`.
pub fn generate_fhrd(params: &ModelParams, design: &[DesignRow], seed: RngSeed) -> Result<SyntheticDataset> {
    params.validate()?;
    if design.is_empty() {
        return Err(domain("design has no areas"));
    }
    let mut records = Vec::with_capacity(design.len());
    let mut latents = Vec::with_capacity(design.len());
    for (i, row) in design.iter().enumerate() {
        if row.z.len() != params.beta.len() {
            return Err(domain(format!("design row {i}: covariate length differs from beta")));
        }
        let (y, v, latent) = draw_area(params, row, seed.substream(i as u64))?;
        records.push(AreaRecord { area_id: (i + 1).to_string(), y, v, n: row.n, z: row.z.clone() });
        latents.push(latent);
    }
    Ok(SyntheticDataset { records, latents, params_used: params.clone() })
}

/// Generates a bootstrap dataset from fitted parameters; the same code path
/// as [`generate_fhrd`], so equal parameters and seeds give equal output.
pub fn generate_bootstrap(fit: &ModelParams, design: &[DesignRow], seed: RngSeed) -> Result<SyntheticDataset> {
    generate_fhrd(fit, design, seed)
}
