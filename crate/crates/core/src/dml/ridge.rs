//! Closed-form ridge regression on standardized covariates, the fast
//! nuisance learner and the analytically checkable one.

use super::DmlError;
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct RidgeModel {
    intercept: f64,
    coefficients: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

pub fn fit_ridge(x: &Array2<f64>, y: &[f64], penalty: f64) -> Result<RidgeModel, DmlError> {
    let (n, p) = x.dim();
    if n == 0 || y.is_empty() {
        return Err(DmlError::EmptyData);
    }
    if y.len() != n {
        return Err(DmlError::ShapeMismatch(format!(
            "{} target(s) for {n} row(s)",
            y.len()
        )));
    }
    if !penalty.is_finite() || penalty < 0.0 {
        return Err(DmlError::InvalidParams(format!(
            "ridge penalty {penalty} must be a finite non-negative number"
        )));
    }

    let nf = n as f64;
    let intercept = y.iter().sum::<f64>() / nf;
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut z = x.clone();
    for j in 0..p {
        means[j] = z.column(j).sum() / nf;
        let variance = z.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / nf;
        let sd = variance.sqrt();
        scales[j] = if sd > 1e-12 { sd } else { 1.0 };
        let (m, s) = (means[j], scales[j]);
        z.column_mut(j).map_inplace(|v| *v = (*v - m) / s);
    }

    // Normal equations (ZᵀZ + penalty·I)β = Zᵀ(y - ȳ).
    let mut system = z.t().dot(&z);
    for j in 0..p {
        system[[j, j]] += penalty;
    }
    let centered: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    let mut rhs = vec![0.0; p];
    for j in 0..p {
        rhs[j] = z.column(j).iter().zip(&centered).map(|(a, b)| a * b).sum();
    }
    let coefficients = solve(system, rhs)?;

    Ok(RidgeModel {
        intercept,
        coefficients,
        means,
        scales,
    })
}

/// Gaussian elimination with partial pivoting; the ridge diagonal keeps the
/// system well conditioned for any penalty > 0.
fn solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, DmlError> {
    let p = b.len();
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("non-empty range");
        if a[[pivot, col]].abs() < 1e-12 {
            return Err(DmlError::InvalidParams(
                "singular ridge system; use a positive penalty".into(),
            ));
        }
        if pivot != col {
            for j in 0..p {
                let tmp = a[[col, j]];
                a[[col, j]] = a[[pivot, j]];
                a[[pivot, j]] = tmp;
            }
            b.swap(col, pivot);
        }
        for row in (col + 1)..p {
            let factor = a[[row, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for j in col..p {
                a[[row, j]] -= factor * a[[col, j]];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut solution = vec![0.0; p];
    for col in (0..p).rev() {
        let mut value = b[col];
        for j in (col + 1)..p {
            value -= a[[col, j]] * solution[j];
        }
        solution[col] = value / a[[col, col]];
    }
    Ok(solution)
}

impl RidgeModel {
    pub fn predict_one(&self, row: &[f64]) -> f64 {
        let mut value = self.intercept;
        for j in 0..self.coefficients.len() {
            value += self.coefficients[j] * (row[j] - self.means[j]) / self.scales[j];
        }
        value
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}
