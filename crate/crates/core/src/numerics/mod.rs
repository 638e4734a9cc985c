//! Numerical building blocks: root finding, quadrature, small dense solves
//! and compensated summation.

pub mod quad;
pub mod roots;

use nalgebra::{DMatrix, DVector};

use crate::error::{FhrdError, Result};

/// Condition threshold below which a normal-equation matrix is treated as singular.
const RANK_TOL: f64 = 1e-12;

/// Solves `(Σ w_j z_j z_jᵀ) b = Σ w_j z_j y_j` for `b`.
///
/// Rows of `z` must share one length `p`; weights must be nonnegative.
pub fn weighted_least_squares(z: &[&[f64]], y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let m = z.len();
    if m == 0 || y.len() != m || w.len() != m {
        return Err(FhrdError::InvalidInput("least squares: mismatched or empty inputs".into()));
    }
    let p = z[0].len();
    if p == 0 || z.iter().any(|row| row.len() != p) {
        return Err(FhrdError::InvalidInput("least squares: ragged design matrix".into()));
    }
    if m < p {
        return Err(FhrdError::SingularDesign(format!("{m} rows for {p} coefficients")));
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for ((row, &yj), &wj) in z.iter().zip(y).zip(w) {
        for a in 0..p {
            rhs[a] += wj * row[a] * yj;
            for b in 0..=a {
                gram[(a, b)] += wj * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
    if !(max > 0.0) || !(min > RANK_TOL * max) {
        return Err(FhrdError::SingularDesign(format!("normal matrix eigenvalues span [{min:e}, {max:e}]")));
    }
    let chol =
        gram.cholesky().ok_or_else(|| FhrdError::SingularDesign("normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<KahanSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(v), 2.0);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let rows: Vec<[f64; 2]> = vec![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let z: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let err = weighted_least_squares(&z, &[1.0, 2.0, 3.0], &[1.0; 3]).unwrap_err();
        assert!(matches!(err, FhrdError::SingularDesign(_)));
        let err = weighted_least_squares(&z[..1], &[1.0], &[1.0]).unwrap_err();
        assert!(matches!(err, FhrdError::SingularDesign(_)));
    }
}
