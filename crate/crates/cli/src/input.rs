//! Dataset and weight files.
//!
//! A dataset is a CSV with header `area_id,y,v,n,z1,...,zp` and `z1 = 1` on
//! every row. A weight file is a CSV with header `area_id,w`. Lines starting
//! with `#` are skipped. Diagnostics name the file line of the offending record.

use std::collections::HashMap;
use std::path::Path;

use fhrd::model::{AreaRecord, ModelParams};
use fhrd::prediction::BenchmarkWeights;
use serde::Deserialize;

use crate::error::{input, Result};

/// Weights must sum to one within this tolerance before they are rescaled.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Area records plus the decimal text of the fields that are echoed back in
/// the output.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<AreaRecord>,
    pub y_text: Vec<String>,
    pub v_text: Vec<String>,
}

impl Dataset {
    pub fn area_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.area_id.as_str())
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| input(format!("{}: {e}", path.display())))
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> u64 {
    rec.position().map_or(fallback as u64, |p| p.line())
}

fn parse_real(text: &str, what: &str, line: u64) -> Result<f64> {
    let x: f64 = text.parse().map_err(|_| input(format!("line {line}: {what} = {text:?} is not a number")))?;
    if !x.is_finite() {
        return Err(input(format!("line {line}: {what} must be finite, got {text}")));
    }
    Ok(x)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| input(format!("{}: {e}", path.display())))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 5 || names[..4] != ["area_id", "y", "v", "n"] {
        return Err(input(format!(
            "{}: header must be area_id,y,v,n,z1,...,zp; got {}",
            path.display(),
            names.join(",")
        )));
    }
    for (k, name) in names[4..].iter().enumerate() {
        if *name != format!("z{}", k + 1) {
            return Err(input(format!("{}: column {} should be z{}, got {name}", path.display(), k + 5, k + 1)));
        }
    }
    let p = names.len() - 4;

    let mut out = Dataset { records: Vec::new(), y_text: Vec::new(), v_text: Vec::new() };
    let mut seen = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| input(format!("{}: {e}", path.display())))?;
        let line = line_of(&row, i + 2);
        if row.len() != p + 4 {
            return Err(input(format!("line {line}: expected {} fields, found {}", p + 4, row.len())));
        }
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(input(format!("line {line}: empty area_id")));
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(input(format!("line {line}: area_id {id:?} already used on line {prev}")));
        }
        let y = parse_real(&row[1], "y", line)?;
        let v = parse_real(&row[2], "v", line)?;
        if v <= 0.0 {
            return Err(input(format!("line {line}: v must be positive, got {}", &row[2])));
        }
        let n: u32 = row[3]
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| input(format!("line {line}: n must be a positive integer, got {:?}", &row[3])))?;
        let z = (0..p).map(|k| parse_real(&row[4 + k], &format!("z{}", k + 1), line)).collect::<Result<Vec<_>>>()?;
        if z[0] != 1.0 {
            return Err(input(format!("line {line}: z1 must be 1, got {}", &row[4])));
        }
        out.records.push(AreaRecord { area_id: id, y, v, n, z });
        out.y_text.push(row[1].to_string());
        out.v_text.push(row[2].to_string());
    }
    if out.records.is_empty() {
        return Err(input(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

/// Reads weights and aligns them with the dataset's area order.
pub fn read_weights(path: &Path, data: &Dataset) -> Result<BenchmarkWeights> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| input(format!("{}: {e}", path.display())))?.clone();
    if header.iter().collect::<Vec<_>>() != ["area_id", "w"] {
        return Err(input(format!("{}: header must be area_id,w", path.display())));
    }
    let index: HashMap<&str, usize> = data.area_ids().enumerate().map(|(i, id)| (id, i)).collect();
    let mut w: Vec<Option<f64>> = vec![None; data.records.len()];
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| input(format!("{}: {e}", path.display())))?;
        let line = line_of(&row, i + 2);
        if row.len() != 2 {
            return Err(input(format!("line {line}: expected 2 fields, found {}", row.len())));
        }
        let &k = index
            .get(&row[0])
            .ok_or_else(|| input(format!("line {line}: area_id {:?} is not in the dataset", &row[0])))?;
        if w[k].is_some() {
            return Err(input(format!("line {line}: duplicate weight for area {:?}", &row[0])));
        }
        let x = parse_real(&row[1], "w", line)?;
        if x < 0.0 {
            return Err(input(format!("line {line}: weight must be nonnegative, got {}", &row[1])));
        }
        w[k] = Some(x);
    }
    let missing: Vec<&str> = data.area_ids().zip(&w).filter(|(_, x)| x.is_none()).map(|(id, _)| id).collect();
    if !missing.is_empty() {
        return Err(input(format!("{}: no weight for areas {}", path.display(), missing.join(", "))));
    }
    let w: Vec<f64> = w.into_iter().flatten().collect();
    BenchmarkWeights::normalized(w, WEIGHT_SUM_TOL).map_err(|e| input(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    beta: Vec<f64>,
    tau2: f64,
    alpha: f64,
    gamma: f64,
}

/// Reads `{"beta": [...], "tau2": ..., "alpha": ..., "gamma": ...}`.
pub fn read_params(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let p: ParamsFile = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(ModelParams::new(p.beta, p.tau2, p.alpha, p.gamma)?)
}
