//! Turns a finished run log into a causal dataset: one row per successful
//! run, one-hot treatment columns along the chosen axis, and the SEC
//! signature of the inoculated text plus the detection score as outcomes.

use super::dataset::ArticleRecord;
use super::experiment::RunRecord;
use super::RunnerError;
use crate::notears::CausalDataset;
use crate::sec::SecMeasure;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Which grid dimension becomes the treatment: the model that produced the
/// inoculation, or the attack types present in the source article.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentAxis {
    Llm,
    Attack,
}

impl TreatmentAxis {
    pub fn name(self) -> &'static str {
        match self {
            TreatmentAxis::Llm => "llm",
            TreatmentAxis::Attack => "attack",
        }
    }
}

pub const DETECTION_COLUMN: &str = "Detection";

/// A built dataset plus the columns that had to be dropped because they
/// were constant across every usable run.
#[derive(Debug)]
pub struct CausalBuild {
    pub dataset: CausalDataset,
    pub dropped_columns: Vec<String>,
}

/// Assemble the causal dataset from run records. Only error-free runs with
/// a complete inoculated-text signature contribute rows; constant columns
/// are dropped (a single-model grid has no model contrast, for example)
/// and reported on the build.
pub fn build_causal_dataset(
    records: &[RunRecord],
    articles: &[ArticleRecord],
    axis: TreatmentAxis,
) -> Result<CausalBuild, RunnerError> {
    let by_id: BTreeMap<&str, &ArticleRecord> =
        articles.iter().map(|a| (a.id.as_str(), a)).collect();

    struct UsableRun<'a> {
        record: &'a RunRecord,
        article: &'a ArticleRecord,
    }
    let mut usable = Vec::new();
    for record in records {
        let Some(payload) = &record.payload else {
            continue;
        };
        let Some(inoculated) = &payload.inoculated_sec else {
            continue;
        };
        if !inoculated.is_complete() {
            continue;
        }
        let article = by_id.get(record.article_id.as_str()).ok_or_else(|| {
            RunnerError::Config(format!(
                "run log references article {:?} missing from the dataset",
                record.article_id
            ))
        })?;
        usable.push(UsableRun { record, article });
    }
    if usable.is_empty() {
        return Err(RunnerError::EmptyAfterFiltering);
    }

    let treatments: Vec<String> = match axis {
        TreatmentAxis::Llm => {
            let set: BTreeSet<&str> = usable
                .iter()
                .map(|u| u.record.model_id.as_str())
                .collect();
            set.into_iter().map(str::to_string).collect()
        }
        TreatmentAxis::Attack => {
            let set: BTreeSet<&str> = usable
                .iter()
                .flat_map(|u| u.article.attack_types.iter().map(String::as_str))
                .collect();
            set.into_iter().map(str::to_string).collect()
        }
    };

    let mut column_names: Vec<String> = treatments.clone();
    column_names.extend(SecMeasure::ALL.iter().map(|m| m.name().to_string()));
    column_names.push(DETECTION_COLUMN.to_string());

    let n = usable.len();
    let d = column_names.len();
    let mut data = Array2::<f64>::zeros((n, d));
    for (row, run) in usable.iter().enumerate() {
        let payload = run.record.payload.as_ref().expect("filtered above");
        let inoculated = payload.inoculated_sec.as_ref().expect("filtered above");
        for (col, treatment) in treatments.iter().enumerate() {
            let on = match axis {
                TreatmentAxis::Llm => run.record.model_id == *treatment,
                TreatmentAxis::Attack => run.article.attack_types.contains(treatment),
            };
            data[[row, col]] = if on { 1.0 } else { 0.0 };
        }
        for (offset, &measure) in SecMeasure::ALL.iter().enumerate() {
            let value = inoculated.get(measure).ok_or_else(|| {
                RunnerError::Config(format!(
                    "signature for {:?} is missing measure {:?}",
                    inoculated.text_id,
                    measure.name()
                ))
            })?;
            data[[row, treatments.len() + offset]] = value;
        }
        data[[row, d - 1]] = payload.detection_score;
    }

    let mut kept_names = Vec::new();
    let mut kept_cols = Vec::new();
    let mut dropped_columns = Vec::new();
    for (col, name) in column_names.iter().enumerate() {
        let column = data.column(col);
        let first = column[0];
        if column.iter().all(|&v| v == first) {
            log::warn!("dropping constant column {name:?} (all values {first})");
            dropped_columns.push(name.clone());
        } else {
            kept_names.push(name.clone());
            kept_cols.push(col);
        }
    }

    let mut kept = Array2::<f64>::zeros((n, kept_cols.len()));
    for (new_col, &old_col) in kept_cols.iter().enumerate() {
        kept.column_mut(new_col).assign(&data.column(old_col));
    }
    let kept_treatments: Vec<String> = treatments
        .iter()
        .filter(|t| kept_names.iter().any(|k| k == *t))
        .cloned()
        .collect();

    let dataset = CausalDataset::new(kept_names, kept, kept_treatments)?;
    Ok(CausalBuild {
        dataset,
        dropped_columns,
    })
}
