//! Shared fixture builders for the criterion benches.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Dense random weight matrix, entries well inside the convergence-friendly
/// unit box.
pub fn random_weights(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            0.0
        } else {
            rng.gen_range(-0.8..0.8)
        }
    })
}

/// X1 -> X2 -> X3 chain sample for structure-learning benches.
pub fn chain_sample(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Array2::zeros((n, 3));
    for mut row in raw.rows_mut() {
        let x1 = standard_normal(&mut rng);
        let x2 = 0.9 * x1 + 0.5 * standard_normal(&mut rng);
        let x3 = 0.9 * x2 + 0.5 * standard_normal(&mut rng);
        row[0] = x1;
        row[1] = x2;
        row[2] = x3;
    }
    raw
}

/// Covariates, binary treatment, and outcome with a known effect.
pub fn ate_sample(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covariates = Array2::zeros((n, 3));
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..3 {
            covariates[[i, j]] = standard_normal(&mut rng);
        }
        let t = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        treatment.push(t);
        outcome.push(1.5 * t + covariates[[i, 0]] + standard_normal(&mut rng));
    }
    (covariates, treatment, outcome)
}
