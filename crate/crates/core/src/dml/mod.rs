//! Average-treatment-effect estimation by double/debiased machine
//! learning: residualize outcome and treatment on covariates with
//! cross-fitted nuisance models, then regress outcome residuals on
//! treatment residuals. One binary treatment at a time.

pub mod forest;
pub mod ridge;

use crate::notears::CausalDataset;
use forest::{fit_forest, splitmix64, ForestParams};
use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmlError {
    #[error("no rows to fit")]
    EmptyData,
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    InvalidParams(String),
    #[error("treatment column {0:?} is not 0/1")]
    NonBinaryTreatment(String),
    #[error("treatment needs both values at least {required} times; saw {zeros} zero(s) and {ones} one(s)")]
    DegenerateTreatment {
        zeros: usize,
        ones: usize,
        required: usize,
    },
    #[error("fold {fold} trained on a single treatment value")]
    DegenerateFold { fold: usize },
    #[error("treatment residual variance is near zero; no overlap to identify the effect")]
    NearZeroTreatmentVariance,
    #[error("column {0:?} is not in the dataset")]
    UnknownColumn(String),
    #[error("dataset declares no treatment columns")]
    NoTreatments,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum NuisanceLearner {
    Forest(ForestParams),
    Ridge { penalty: f64 },
}

impl NuisanceLearner {
    pub fn default_forest() -> Self {
        Self::Forest(ForestParams::default())
    }

    pub fn default_ridge() -> Self {
        Self::Ridge { penalty: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Forest(_) => "forest",
            Self::Ridge { .. } => "ridge",
        }
    }
}

/// One binary treatment, one real outcome, and the covariates to
/// residualize both on.
#[derive(Debug, Clone)]
pub struct AteProblem {
    covariates: Array2<f64>,
    treatment: Vec<f64>,
    outcome: Vec<f64>,
    folds: usize,
    learner: NuisanceLearner,
    seed: u64,
}

impl AteProblem {
    pub fn new(
        covariates: Array2<f64>,
        treatment: Vec<f64>,
        outcome: Vec<f64>,
        folds: usize,
        learner: NuisanceLearner,
        seed: u64,
    ) -> Result<Self, DmlError> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(DmlError::EmptyData);
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(DmlError::ShapeMismatch(format!(
                "{n} covariate row(s), {} treatment value(s), {} outcome value(s)",
                treatment.len(),
                outcome.len()
            )));
        }
        if folds < 2 {
            return Err(DmlError::InvalidParams(format!(
                "{folds} fold(s); cross-fitting needs at least 2"
            )));
        }
        if covariates.iter().any(|v| !v.is_finite())
            || outcome.iter().any(|v| !v.is_finite())
        {
            return Err(DmlError::InvalidParams(
                "covariates and outcome must be finite".into(),
            ));
        }
        if treatment.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DmlError::NonBinaryTreatment("treatment".into()));
        }
        let ones = treatment.iter().filter(|&&v| v == 1.0).count();
        let zeros = n - ones;
        let required = folds.max(5);
        if ones < required || zeros < required {
            return Err(DmlError::DegenerateTreatment {
                zeros,
                ones,
                required,
            });
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            folds,
            learner,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResidualStats {
    pub fold: usize,
    pub n_test: usize,
    pub outcome_residual_mean: f64,
    pub outcome_residual_sd: f64,
    pub treatment_residual_mean: f64,
    pub treatment_residual_sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteEstimate {
    pub ate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_used: usize,
    pub learner: String,
    pub per_fold_residual_stats: Vec<FoldResidualStats>,
}

/// Deal treated and control rows into folds separately so every training
/// split sees both treatment values.
fn stratified_fold_assignments(treatment: &[f64], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x666f_6c64));
    let mut assignment = vec![0usize; treatment.len()];
    for target in [1.0, 0.0] {
        let mut rows: Vec<usize> = (0..treatment.len())
            .filter(|&i| treatment[i] == target)
            .collect();
        rows.shuffle(&mut rng);
        for (position, row) in rows.into_iter().enumerate() {
            assignment[row] = position % folds;
        }
    }
    assignment
}

type Predictor = Box<dyn Fn(&[f64]) -> f64>;

/// Out-of-fold predictions: each row is predicted by the model trained on
/// every fold except its own. The trainer receives the original row
/// indices of its training split so tests can audit the discipline.
fn cross_fit<F>(
    x: &Array2<f64>,
    targets: &[f64],
    fold_of: &[usize],
    folds: usize,
    train: F,
) -> Result<Vec<f64>, DmlError>
where
    F: Fn(&Array2<f64>, &[f64], &[usize], usize) -> Result<Predictor, DmlError>,
{
    let n = targets.len();
    let mut predictions = vec![f64::NAN; n];
    for fold in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        if test_rows.is_empty() {
            continue;
        }
        let x_train = x.select(Axis(0), &train_rows);
        let y_train: Vec<f64> = train_rows.iter().map(|&i| targets[i]).collect();
        let model = train(&x_train, &y_train, &train_rows, fold)?;
        for &row in &test_rows {
            let values: Vec<f64> = x.row(row).to_vec();
            predictions[row] = model(&values);
        }
    }
    Ok(predictions)
}

fn make_trainer(
    learner: &NuisanceLearner,
    base_seed: u64,
) -> impl Fn(&Array2<f64>, &[f64], &[usize], usize) -> Result<Predictor, DmlError> + '_ {
    move |x_train, y_train, _rows, fold| match learner {
        NuisanceLearner::Forest(params) => {
            let fold_params = ForestParams {
                seed: splitmix64(base_seed.wrapping_add(fold as u64 + 1)),
                ..params.clone()
            };
            let model = fit_forest(x_train, y_train, &fold_params)?;
            Ok(Box::new(move |row: &[f64]| model.predict_one(row)) as Predictor)
        }
        NuisanceLearner::Ridge { penalty } => {
            let model = ridge::fit_ridge(x_train, y_train, *penalty)?;
            Ok(Box::new(move |row: &[f64]| model.predict_one(row)) as Predictor)
        }
    }
}

pub fn estimate_ate(problem: &AteProblem) -> Result<AteEstimate, DmlError> {
    let n = problem.n();
    let fold_of = stratified_fold_assignments(&problem.treatment, problem.folds, problem.seed);
    for fold in 0..problem.folds {
        let mut saw_one = false;
        let mut saw_zero = false;
        for i in 0..n {
            if fold_of[i] != fold {
                if problem.treatment[i] == 1.0 {
                    saw_one = true;
                } else {
                    saw_zero = true;
                }
            }
        }
        if !(saw_one && saw_zero) {
            return Err(DmlError::DegenerateFold { fold });
        }
    }

    let outcome_hat = cross_fit(
        &problem.covariates,
        &problem.outcome,
        &fold_of,
        problem.folds,
        make_trainer(&problem.learner, splitmix64(problem.seed ^ 0x6f75_7463)),
    )?;
    let treatment_hat = cross_fit(
        &problem.covariates,
        &problem.treatment,
        &fold_of,
        problem.folds,
        make_trainer(&problem.learner, splitmix64(problem.seed ^ 0x7472_6561)),
    )?;

    let outcome_res: Vec<f64> = (0..n).map(|i| problem.outcome[i] - outcome_hat[i]).collect();
    let treatment_res: Vec<f64> = (0..n)
        .map(|i| problem.treatment[i] - treatment_hat[i])
        .collect();

    let nf = n as f64;
    let sum_t2: f64 = treatment_res.iter().map(|v| v * v).sum();
    if sum_t2 / nf < 1e-10 {
        return Err(DmlError::NearZeroTreatmentVariance);
    }
    let sum_ty: f64 = (0..n).map(|i| treatment_res[i] * outcome_res[i]).sum();
    let ate = sum_ty / sum_t2;

    let psi: Vec<f64> = (0..n)
        .map(|i| treatment_res[i] * (outcome_res[i] - treatment_res[i] * ate))
        .collect();
    let psi_mean = psi.iter().sum::<f64>() / nf;
    let psi_var = psi.iter().map(|v| (v - psi_mean).powi(2)).sum::<f64>() / nf;
    let t2_mean = sum_t2 / nf;
    let std_error = (psi_var / (t2_mean * t2_mean) / nf).sqrt();

    let per_fold_residual_stats = (0..problem.folds)
        .map(|fold| {
            let rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            let stats = |res: &[f64]| -> (f64, f64) {
                if rows.is_empty() {
                    return (0.0, 0.0);
                }
                let mean = rows.iter().map(|&i| res[i]).sum::<f64>() / rows.len() as f64;
                let sd = if rows.len() > 1 {
                    (rows.iter().map(|&i| (res[i] - mean).powi(2)).sum::<f64>()
                        / (rows.len() - 1) as f64)
                        .sqrt()
                } else {
                    0.0
                };
                (mean, sd)
            };
            let (om, os) = stats(&outcome_res);
            let (tm, ts) = stats(&treatment_res);
            FoldResidualStats {
                fold,
                n_test: rows.len(),
                outcome_residual_mean: om,
                outcome_residual_sd: os,
                treatment_residual_mean: tm,
                treatment_residual_sd: ts,
            }
        })
        .collect();

    Ok(AteEstimate {
        ate,
        std_error,
        ci_low: ate - 1.96 * std_error,
        ci_high: ate + 1.96 * std_error,
        n_used: n,
        learner: problem.learner.name().to_string(),
        per_fold_residual_stats,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub folds: usize,
    pub learner: NuisanceLearner,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            learner: NuisanceLearner::default_forest(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct SweepItem {
    pub treatment: String,
    pub outcome: String,
    pub result: Result<AteEstimate, DmlError>,
}

/// Estimate the ATE of each treatment column on `outcome`, dropping every
/// other treatment column from the design; remaining non-outcome columns
/// are the covariates. Per-treatment failures are carried in the item, not
/// propagated.
pub fn run_treatment_sweep(
    dataset: &CausalDataset,
    outcome: &str,
    config: &SweepConfig,
) -> Result<Vec<SweepItem>, DmlError> {
    let treatments = dataset.treatment_columns().to_vec();
    if treatments.is_empty() {
        return Err(DmlError::NoTreatments);
    }
    let outcome_index = dataset
        .column_index(outcome)
        .ok_or_else(|| DmlError::UnknownColumn(outcome.to_string()))?;
    if treatments.iter().any(|t| t == outcome) {
        return Err(DmlError::InvalidParams(format!(
            "outcome {outcome:?} is a treatment column"
        )));
    }

    let raw = dataset.raw();
    let n = dataset.n();
    let outcome_values: Vec<f64> = raw.column(outcome_index).to_vec();

    let items = treatments
        .iter()
        .map(|treatment| {
            let treatment_index = dataset
                .column_index(treatment)
                .expect("treatment validated at construction");
            let covariate_indices: Vec<usize> = (0..dataset.d())
                .filter(|&j| {
                    j != outcome_index && !dataset.is_treatment(j)
                })
                .collect();
            let covariates = Array2::from_shape_fn((n, covariate_indices.len()), |(i, j)| {
                raw[[i, covariate_indices[j]]]
            });
            let treatment_values: Vec<f64> = raw.column(treatment_index).to_vec();
            let result = AteProblem::new(
                covariates,
                treatment_values,
                outcome_values.clone(),
                config.folds,
                config.learner.clone(),
                config.seed,
            )
            .and_then(|problem| estimate_ate(&problem));
            if let Err(error) = &result {
                log::warn!("treatment {treatment:?} on {outcome:?}: {error}");
            }
            SweepItem {
                treatment: treatment.clone(),
                outcome: outcome.to_string(),
                result,
            }
        })
        .collect();
    Ok(items)
}

/// Frozen CSV column order for sweep exports.
pub const ATE_CSV_HEADER: [&str; 8] = [
    "treatment",
    "outcome",
    "ate",
    "std_error",
    "ci_low",
    "ci_high",
    "n",
    "learner",
];

/// Writes one row per successful estimate; failed items are logged and
/// reported through the JSON export instead.
pub fn export_sweep_csv<W: std::io::Write>(
    items: &[SweepItem],
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(ATE_CSV_HEADER)?;
    for item in items {
        match &item.result {
            Ok(estimate) => out.write_record([
                item.treatment.as_str(),
                item.outcome.as_str(),
                &estimate.ate.to_string(),
                &estimate.std_error.to_string(),
                &estimate.ci_low.to_string(),
                &estimate.ci_high.to_string(),
                &estimate.n_used.to_string(),
                &estimate.learner,
            ])?,
            Err(error) => {
                log::warn!(
                    "omitting failed sweep row {} -> {}: {error}",
                    item.treatment,
                    item.outcome
                );
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepItemReport<'a> {
    treatment: &'a str,
    outcome: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<&'a AteEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn export_sweep_json(items: &[SweepItem]) -> String {
    let reports: Vec<SweepItemReport> = items
        .iter()
        .map(|item| SweepItemReport {
            treatment: &item.treatment,
            outcome: &item.outcome,
            estimate: item.result.as_ref().ok(),
            error: item.result.as_ref().err().map(|e| e.to_string()),
        })
        .collect();
    serde_json::to_string_pretty(&reports).expect("sweep report serializes")
}
