//! Detection scoring against gold labels: per-type precision/recall/F1
//! tables per run group, per-document detection scores, and paired
//! comparisons along one experimental axis.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DetectionResult;
use crate::prompt::PromptStrategy;
use crate::taxonomy::Taxonomy;

/// Ground-truth attack types for one document, stored as canonical ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldLabel {
    pub document_id: String,
    pub attack_ids: Vec<String>,
}

impl GoldLabel {
    /// Normalize `names` through the taxonomy; rejects empty or unknown
    /// labels.
    pub fn new<S: AsRef<str>>(
        taxonomy: &Taxonomy,
        document_id: impl Into<String>,
        names: &[S],
    ) -> Result<Self, EvalError> {
        let document_id = document_id.into();
        if names.is_empty() {
            return Err(EvalError::EmptyGold {
                document_id: document_id.clone(),
            });
        }
        let mut ids = BTreeSet::new();
        for name in names {
            let attack = taxonomy
                .normalize(name.as_ref())
                .ok_or_else(|| EvalError::UnknownAttackType(name.as_ref().to_string()))?;
            ids.insert(attack.id.clone());
        }
        Ok(Self {
            document_id,
            attack_ids: ids.into_iter().collect(),
        })
    }
}

/// Identity of one run group: which model ran which prompt variant at
/// which temperature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupKey {
    pub model_id: String,
    pub strategy: PromptStrategy,
    pub temperature: f64,
}

impl GroupKey {
    fn ord_key(&self) -> (&str, &'static str, u64) {
        (
            &self.model_id,
            self.strategy.code(),
            self.temperature.to_bits(),
        )
    }
}

impl PartialEq for GroupKey {
    fn eq(&self, other: &Self) -> bool {
        self.ord_key() == other.ord_key()
    }
}

impl Eq for GroupKey {}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.model_id, self.strategy.code())
            .cmp(&(&other.model_id, other.strategy.code()))
            .then(self.temperature.total_cmp(&other.temperature))
    }
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.model_id,
            self.strategy.code(),
            self.temperature
        )
    }
}

/// Binary-presence counts and derived scores for one attack type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Row {
    pub attack_type: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-type scores for one run group, all 23 types always present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F1Table {
    pub group: GroupKey,
    pub rows: Vec<F1Row>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold label for document {document_id:?}")]
    MissingGold { document_id: String },
    #[error("duplicate gold label for document {document_id:?}")]
    DuplicateGold { document_id: String },
    #[error("gold label for document {document_id:?} is empty")]
    EmptyGold { document_id: String },
    #[error("unknown attack type {0:?} in gold label")]
    UnknownAttackType(String),
    #[error("detection is for document {got:?}, gold is for {expected:?}")]
    IdMismatch { expected: String, got: String },
    #[error("detections span multiple groups ({0} and {1}); score one group at a time")]
    MixedGroups(String, String),
    #[error("no detections to score")]
    EmptyDetections,
    #[error("groups cannot be paired along the axis: {0}")]
    UnpairedGroups(String),
}

fn ratio(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn gold_map(gold: &[GoldLabel]) -> Result<BTreeMap<&str, BTreeSet<&str>>, EvalError> {
    let mut map = BTreeMap::new();
    for label in gold {
        let set: BTreeSet<&str> = label.attack_ids.iter().map(|s| s.as_str()).collect();
        if map.insert(label.document_id.as_str(), set).is_some() {
            return Err(EvalError::DuplicateGold {
                document_id: label.document_id.clone(),
            });
        }
    }
    Ok(map)
}

/// Count per-type binary presence across one group's detections and derive
/// precision/recall/F1. Confidence values do not gate counting unless
/// `min_confidence` is set (scored entries below it are dropped; unscored
/// entries always count).
pub fn per_type_f1_with_cutoff(
    taxonomy: &Taxonomy,
    detections: &[DetectionResult],
    gold: &[GoldLabel],
    min_confidence: Option<u8>,
) -> Result<F1Table, EvalError> {
    let first = detections.first().ok_or(EvalError::EmptyDetections)?;
    let group = GroupKey {
        model_id: first.model_id.clone(),
        strategy: first.strategy,
        temperature: first.temperature,
    };
    let golds = gold_map(gold)?;

    let mut counts: BTreeMap<&str, (u64, u64, u64)> = taxonomy
        .canonical_attacks()
        .iter()
        .map(|t| (t.id.as_str(), (0, 0, 0)))
        .collect();

    for detection in detections {
        let key = GroupKey {
            model_id: detection.model_id.clone(),
            strategy: detection.strategy,
            temperature: detection.temperature,
        };
        if key != group {
            return Err(EvalError::MixedGroups(group.to_string(), key.to_string()));
        }
        let gold_set = golds.get(detection.document_id.as_str()).ok_or_else(|| {
            EvalError::MissingGold {
                document_id: detection.document_id.clone(),
            }
        })?;
        let predicted: BTreeSet<&str> = detection
            .predicted
            .iter()
            .filter(|a| match (min_confidence, a.confidence) {
                (Some(cutoff), Some(score)) => score >= cutoff,
                _ => true,
            })
            .map(|a| a.attack_id.as_str())
            .collect();
        for (id, (tp, fp, fn_)) in counts.iter_mut() {
            match (predicted.contains(id), gold_set.contains(id)) {
                (true, true) => *tp += 1,
                (true, false) => *fp += 1,
                (false, true) => *fn_ += 1,
                (false, false) => {}
            }
        }
    }

    let mut rows = Vec::with_capacity(counts.len());
    for attack in taxonomy.canonical_attacks() {
        let (tp, fp, fn_) = counts[attack.id.as_str()];
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        rows.push(F1Row {
            attack_type: attack.display_name.clone(),
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_from(precision, recall),
        });
    }

    let supported: Vec<&F1Row> = rows
        .iter()
        .filter(|r| r.tp + r.fp + r.fn_ > 0)
        .collect();
    let macro_f1 = if supported.is_empty() {
        0.0
    } else {
        supported.iter().map(|r| r.f1).sum::<f64>() / supported.len() as f64
    };
    let (tp, fp, fn_) = rows.iter().fold((0, 0, 0), |(a, b, c), r| {
        (a + r.tp, b + r.fp, c + r.fn_)
    });
    let micro_precision = ratio(tp, tp + fp);
    let micro_recall = ratio(tp, tp + fn_);

    Ok(F1Table {
        group,
        rows,
        macro_f1,
        micro_f1: f1_from(micro_precision, micro_recall),
    })
}

pub fn per_type_f1(
    taxonomy: &Taxonomy,
    detections: &[DetectionResult],
    gold: &[GoldLabel],
) -> Result<F1Table, EvalError> {
    per_type_f1_with_cutoff(taxonomy, detections, gold, None)
}

/// Per-document set F1 between predicted and gold attack types; both empty
/// scores 1, one empty scores 0.
pub fn detection_score(detection: &DetectionResult, gold: &GoldLabel) -> Result<f64, EvalError> {
    if detection.document_id != gold.document_id {
        return Err(EvalError::IdMismatch {
            expected: gold.document_id.clone(),
            got: detection.document_id.clone(),
        });
    }
    let predicted: BTreeSet<&str> = detection
        .predicted
        .iter()
        .map(|a| a.attack_id.as_str())
        .collect();
    let gold_set: BTreeSet<&str> = gold.attack_ids.iter().map(|s| s.as_str()).collect();
    if predicted.is_empty() && gold_set.is_empty() {
        return Ok(1.0);
    }
    let intersection = predicted.intersection(&gold_set).count();
    Ok(2.0 * intersection as f64 / (predicted.len() + gold_set.len()) as f64)
}

/// Experimental axis along which groups are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonAxis {
    /// Attack-description toggle (base vs d0), holding confidence fixed.
    Strategy,
    /// Confidence-request toggle (base vs s0), holding descriptions fixed.
    Confidence,
    /// Sampling temperature, holding the prompt strategy fixed.
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Baseline,
    Variant,
    Tie,
}

/// One attack type's F1 under both variants of the axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeDelta {
    pub attack_type: String,
    pub baseline_f1: f64,
    pub variant_f1: f64,
    /// variant minus baseline.
    pub delta: f64,
    pub winner: Winner,
}

/// Paired comparison between two groups differing only along the axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedDelta {
    pub model_id: String,
    pub held_fixed: String,
    pub baseline: GroupKey,
    pub variant: GroupKey,
    /// Sorted by |delta| descending.
    pub rows: Vec<TypeDelta>,
    pub macro_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupComparison {
    pub axis: ComparisonAxis,
    pub pairs: Vec<PairedDelta>,
}

fn residual_key(axis: ComparisonAxis, group: &GroupKey) -> String {
    match axis {
        ComparisonAxis::Strategy => format!(
            "model={} temperature={} confidence={}",
            group.model_id, group.temperature, group.strategy.with_confidence
        ),
        ComparisonAxis::Confidence => format!(
            "model={} temperature={} descriptions={}",
            group.model_id, group.temperature, group.strategy.with_descriptions
        ),
        ComparisonAxis::Temperature => format!(
            "model={} strategy={}",
            group.model_id,
            group.strategy.code()
        ),
    }
}

/// Returns true when `table` is the baseline side of its pair.
fn is_baseline(axis: ComparisonAxis, a: &GroupKey, b: &GroupKey) -> Result<bool, EvalError> {
    let distinct = match axis {
        ComparisonAxis::Strategy => a.strategy.with_descriptions != b.strategy.with_descriptions,
        ComparisonAxis::Confidence => a.strategy.with_confidence != b.strategy.with_confidence,
        ComparisonAxis::Temperature => a.temperature != b.temperature,
    };
    if !distinct {
        return Err(EvalError::UnpairedGroups(format!(
            "{a} and {b} do not differ along the axis"
        )));
    }
    Ok(match axis {
        ComparisonAxis::Strategy => !a.strategy.with_descriptions,
        ComparisonAxis::Confidence => !a.strategy.with_confidence,
        ComparisonAxis::Temperature => a.temperature < b.temperature,
    })
}

/// Pair up tables that agree on everything but the axis and report
/// per-type F1 deltas, largest movement first.
pub fn compare_groups(
    tables: &[F1Table],
    axis: ComparisonAxis,
) -> Result<GroupComparison, EvalError> {
    let mut buckets: BTreeMap<String, Vec<&F1Table>> = BTreeMap::new();
    for table in tables {
        buckets
            .entry(residual_key(axis, &table.group))
            .or_default()
            .push(table);
    }

    let mut pairs = Vec::new();
    for (held_fixed, bucket) in buckets {
        if bucket.len() != 2 {
            return Err(EvalError::UnpairedGroups(format!(
                "{held_fixed} has {} group(s), need exactly 2",
                bucket.len()
            )));
        }
        let (baseline, variant) = if is_baseline(axis, &bucket[0].group, &bucket[1].group)? {
            (bucket[0], bucket[1])
        } else {
            (bucket[1], bucket[0])
        };

        let variant_by_type: BTreeMap<&str, &F1Row> = variant
            .rows
            .iter()
            .map(|r| (r.attack_type.as_str(), r))
            .collect();
        let mut rows: Vec<TypeDelta> = baseline
            .rows
            .iter()
            .map(|b| {
                let v = variant_by_type[b.attack_type.as_str()];
                let delta = v.f1 - b.f1;
                TypeDelta {
                    attack_type: b.attack_type.clone(),
                    baseline_f1: b.f1,
                    variant_f1: v.f1,
                    delta,
                    winner: if delta > 0.0 {
                        Winner::Variant
                    } else if delta < 0.0 {
                        Winner::Baseline
                    } else {
                        Winner::Tie
                    },
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            b.delta
                .abs()
                .total_cmp(&a.delta.abs())
                .then_with(|| a.attack_type.cmp(&b.attack_type))
        });

        pairs.push(PairedDelta {
            model_id: baseline.group.model_id.clone(),
            held_fixed,
            baseline: baseline.group.clone(),
            variant: variant.group.clone(),
            rows,
            macro_delta: variant.macro_f1 - baseline.macro_f1,
        });
    }
    Ok(GroupComparison { axis, pairs })
}

/// Frozen CSV column order for F1 tables.
pub const F1_CSV_HEADER: [&str; 10] = [
    "group_model",
    "group_strategy",
    "group_temperature",
    "attack_type",
    "tp",
    "fp",
    "fn",
    "precision",
    "recall",
    "f1",
];

/// One row per (group, attack type), in table order.
pub fn export_f1_csv<W: std::io::Write>(
    tables: &[F1Table],
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(F1_CSV_HEADER)?;
    for table in tables {
        for row in &table.rows {
            out.write_record([
                table.group.model_id.as_str(),
                table.group.strategy.code(),
                &table.group.temperature.to_string(),
                row.attack_type.as_str(),
                &row.tp.to_string(),
                &row.fp.to_string(),
                &row.fn_.to_string(),
                &row.precision.to_string(),
                &row.recall.to_string(),
                &row.f1.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn export_f1_json(tables: &[F1Table]) -> String {
    serde_json::to_string_pretty(tables).expect("F1 tables serialize")
}
