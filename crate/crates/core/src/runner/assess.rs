//! Causal assessment over a built dataset: structure discovery for the
//! SEM edge report and a treatment-effect sweep for the ATE report, with
//! both views joined into one effect-pair summary.

use super::config::AssessorSettings;
use super::RunnerError;
use crate::dml::{
    export_sweep_csv, export_sweep_json, run_treatment_sweep, SweepConfig, SweepItem,
};
use crate::notears::{
    export_dag_json, export_edges_csv, fit, CausalDataset, NotearsConfig, NotearsError,
    WeightedDag,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// One treatment/outcome cell with the structural weight and the
/// double-ML estimate side by side.
#[derive(Debug, Clone, Serialize)]
pub struct EffectPair {
    pub treatment: String,
    pub outcome: String,
    /// Weight of the direct SEM edge treatment -> outcome; 0 when the
    /// fitted graph has no such edge.
    pub sem_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    pub learner: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct AssessReport {
    pub dag: WeightedDag,
    /// Flat sweep results; each item names its outcome.
    pub sweeps: Vec<SweepItem>,
    pub summary: Vec<EffectPair>,
    /// Outcomes actually swept, after dropping configured names absent
    /// from the dataset.
    pub outcomes: Vec<String>,
}

/// Fit the structural model with the configured penalty and threshold. A
/// fit that exhausts its penalty schedule is reported from its best
/// iterate rather than failed; the result carries `converged = false`.
pub fn fit_structure(
    dataset: &CausalDataset,
    settings: &AssessorSettings,
) -> Result<WeightedDag, RunnerError> {
    let notears_config = NotearsConfig {
        lambda1: settings.lambda1,
        omega: settings.omega,
        ..NotearsConfig::default()
    };
    match fit(dataset, &notears_config) {
        Ok(dag) => Ok(dag),
        Err(NotearsError::DidNotConverge { h_final, best }) => {
            log::warn!("structure fit stopped at h = {h_final:e}; reporting its best iterate");
            Ok(*best)
        }
        Err(other) => Err(other.into()),
    }
}

/// Run the double-ML sweep for every resolved outcome; items are flat and
/// each names its outcome.
pub fn sweep_outcomes(
    dataset: &CausalDataset,
    settings: &AssessorSettings,
    seed: u64,
) -> Result<(Vec<String>, Vec<SweepItem>), RunnerError> {
    let outcomes = resolve_outcomes(dataset, settings)?;
    let sweep_config = SweepConfig {
        folds: settings.folds,
        learner: settings.nuisance_learner(seed),
        seed,
    };
    let mut sweeps = Vec::new();
    for outcome in &outcomes {
        sweeps.extend(run_treatment_sweep(dataset, outcome, &sweep_config)?);
    }
    Ok((outcomes, sweeps))
}

/// Fit the structural model and sweep every treatment against every
/// outcome, joining both views into one effect-pair summary.
pub fn assess(
    dataset: &CausalDataset,
    settings: &AssessorSettings,
    seed: u64,
) -> Result<AssessReport, RunnerError> {
    let dag = fit_structure(dataset, settings)?;
    let (outcomes, sweeps) = sweep_outcomes(dataset, settings, seed)?;
    let learner_name = settings.nuisance_learner(seed).name().to_string();

    let summary = sweeps
        .iter()
        .map(|item| {
            let sem_weight = dag.weight(&item.treatment, &item.outcome).unwrap_or(0.0);
            match &item.result {
                Ok(estimate) => EffectPair {
                    treatment: item.treatment.clone(),
                    outcome: item.outcome.clone(),
                    sem_weight,
                    ate: Some(estimate.ate),
                    std_error: Some(estimate.std_error),
                    ci_low: Some(estimate.ci_low),
                    ci_high: Some(estimate.ci_high),
                    learner: estimate.learner.clone(),
                    error: None,
                },
                Err(error) => EffectPair {
                    treatment: item.treatment.clone(),
                    outcome: item.outcome.clone(),
                    sem_weight,
                    ate: None,
                    std_error: None,
                    ci_low: None,
                    ci_high: None,
                    learner: learner_name.clone(),
                    error: Some(error.to_string()),
                },
            }
        })
        .collect();

    Ok(AssessReport {
        dag,
        sweeps,
        summary,
        outcomes,
    })
}

/// Configured outcomes filtered to columns present in the dataset (a
/// configured outcome can legitimately vanish when it was constant across
/// the runs); with nothing configured, every non-treatment column is swept.
fn resolve_outcomes(
    dataset: &CausalDataset,
    settings: &AssessorSettings,
) -> Result<Vec<String>, RunnerError> {
    if settings.outcomes.is_empty() {
        return Ok(dataset
            .column_names()
            .iter()
            .filter(|c| !dataset.treatment_columns().contains(c))
            .cloned()
            .collect());
    }
    let mut resolved = Vec::new();
    for outcome in &settings.outcomes {
        if dataset.column_index(outcome).is_some() {
            resolved.push(outcome.clone());
        } else {
            log::warn!("configured outcome {outcome:?} is not in the dataset; skipping");
        }
    }
    if resolved.is_empty() {
        return Err(RunnerError::Config(format!(
            "none of the configured outcomes {:?} are present in the dataset",
            settings.outcomes
        )));
    }
    Ok(resolved)
}

#[derive(Serialize)]
struct AssessSummaryFile<'a> {
    converged: bool,
    effective_omega: f64,
    omega_raised: bool,
    edge_count: usize,
    outcomes: &'a [String],
    effects: &'a [EffectPair],
}

/// Write the SEM and ATE artifacts into `out_dir` and return their
/// content hashes keyed by file name.
pub fn write_assess_reports(
    out_dir: &Path,
    report: &AssessReport,
) -> Result<BTreeMap<String, String>, RunnerError> {
    std::fs::create_dir_all(out_dir)?;
    let mut hashes = BTreeMap::new();

    let mut edges_csv = Vec::new();
    export_edges_csv(&report.dag, &mut edges_csv).map_err(std::io::Error::other)?;
    write_hashed(out_dir, "sem_edges.csv", &edges_csv, &mut hashes)?;
    write_hashed(
        out_dir,
        "sem_report.json",
        export_dag_json(&report.dag).as_bytes(),
        &mut hashes,
    )?;

    let mut sweep_csv = Vec::new();
    export_sweep_csv(&report.sweeps, &mut sweep_csv).map_err(std::io::Error::other)?;
    write_hashed(out_dir, "ate_sweep.csv", &sweep_csv, &mut hashes)?;
    write_hashed(
        out_dir,
        "ate_report.json",
        export_sweep_json(&report.sweeps).as_bytes(),
        &mut hashes,
    )?;

    let summary = AssessSummaryFile {
        converged: report.dag.converged,
        effective_omega: report.dag.omega,
        omega_raised: report.dag.omega_raised,
        edge_count: report.dag.edges.len(),
        outcomes: &report.outcomes,
        effects: &report.summary,
    };
    write_hashed(
        out_dir,
        "assess_summary.json",
        serde_json::to_string_pretty(&summary)
            .expect("assessment summary serializes")
            .as_bytes(),
        &mut hashes,
    )?;
    Ok(hashes)
}

fn write_hashed(
    out_dir: &Path,
    name: &str,
    bytes: &[u8],
    hashes: &mut BTreeMap<String, String>,
) -> Result<(), RunnerError> {
    std::fs::write(out_dir.join(name), bytes)?;
    let digest = Sha256::digest(bytes);
    hashes.insert(
        name.to_string(),
        digest.iter().map(|b| format!("{b:02x}")).collect(),
    );
    Ok(())
}
