//! Grid execution with crash-resumable persistence. Run records append to
//! a JSONL log keyed by (article, model, strategy, temperature); a rerun
//! skips persisted keys entirely, so a completed experiment makes zero
//! endpoint calls and re-emits byte-identical tables.

use super::config::{parse_strategy, ExperimentConfig};
use super::dataset::{load_dataset, ArticleRecord};
use super::RunnerError;
use crate::agents::{defend, detect, DefenseResult, DetectionResult};
use crate::evaluation::{
    compare_groups, detection_score, export_f1_csv, per_type_f1, ComparisonAxis, F1Table,
    GoldLabel, GroupComparison, GroupKey,
};
use crate::gateway::{Gateway, RouteTable};
use crate::sec::{ScorerRegistry, SecSignature};
use crate::taxonomy::Taxonomy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const RUNS_FILE_NAME: &str = "runs.jsonl";
pub const LOCK_FILE_NAME: &str = ".lock";

/// Everything produced by one grid cell. Exactly one of `error` and
/// `payload` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub article_id: String,
    pub model_id: String,
    pub strategy: String,
    pub temperature: f64,
    pub started_at_unix_ms: u64,
    pub finished_at_unix_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<RunPayload>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPayload {
    pub detection: DetectionResult,
    /// Per-document set F1 against the gold attack types, in [0, 1].
    pub detection_score: f64,
    pub defense: Option<DefenseResult>,
    pub attack_sec: SecSignature,
    pub inoculated_sec: Option<SecSignature>,
}

impl RunRecord {
    pub fn key(&self) -> String {
        run_key(
            &self.article_id,
            &self.model_id,
            &self.strategy,
            self.temperature,
        )
    }

    fn validate(&self) -> Result<(), String> {
        match (&self.error, &self.payload) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err("record has both error and payload".into()),
            (None, None) => Err("record has neither error nor payload".into()),
        }
    }
}

pub fn run_key(article_id: &str, model_id: &str, strategy: &str, temperature: f64) -> String {
    format!("{article_id}\u{1f}{model_id}\u{1f}{strategy}\u{1f}{temperature}")
}

struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self, RunnerError> {
        let path = dir.join(LOCK_FILE_NAME);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut file) => {
                let _ = writeln!(file, "pid {}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RunnerError::LockHeld {
                    path: path.display().to_string(),
                })
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn now_unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn load_run_log(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(line).map_err(|e| RunnerError::CorruptRunLog {
                line: index + 1,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|reason| RunnerError::CorruptRunLog {
            line: index + 1,
            reason,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// SHA-256 over the run log with both timestamp fields zeroed, so resumed
/// and fresh runs of the same grid hash identically.
pub fn run_log_content_hash(records: &[RunRecord]) -> String {
    let mut hasher = Sha256::new();
    for record in records {
        let mut stripped = record.clone();
        stripped.started_at_unix_ms = 0;
        stripped.finished_at_unix_ms = 0;
        hasher.update(serde_json::to_string(&stripped).expect("record serializes"));
        hasher.update([b'\n']);
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String, std::io::Error> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub articles: usize,
    pub grid_cells: usize,
    pub completed_runs: usize,
    pub failed_runs: usize,
    pub new_endpoint_runs: usize,
    pub group_macro_f1: BTreeMap<String, f64>,
    pub group_micro_f1: BTreeMap<String, f64>,
    /// Content hashes of the deterministic artifacts; the run log hash is
    /// computed with timestamps zeroed.
    pub artifact_hashes: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub tables: Vec<F1Table>,
    pub comparisons: Vec<GroupComparison>,
    /// Grid cells actually executed this invocation (not resumed).
    pub new_runs: usize,
    pub artifact_hashes: BTreeMap<String, String>,
}

/// Execute the articles x models x strategies x temperatures grid.
///
/// Per-run failures are recorded, not raised; only configuration, dataset,
/// IO, and lock problems abort. Results land in `config.output_dir`:
/// `config.toml`, `runs.jsonl`, `f1.csv`, `f1.json`, `comparisons.json`,
/// `summary.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, RunnerError> {
    config.validate()?;
    let articles = load_dataset(&config.dataset)?;
    let taxonomy = Taxonomy::builtin();
    let registry = ScorerRegistry::with_builtin_lexicon();

    std::fs::create_dir_all(&config.output_dir)?;
    let _lock = LockGuard::acquire(&config.output_dir)?;
    std::fs::write(config.output_dir.join("config.toml"), config.snapshot_toml())?;

    let runs_path = config.output_dir.join(RUNS_FILE_NAME);
    let mut records = load_run_log(&runs_path)?;
    let mut persisted: BTreeSet<String> = records.iter().map(|r| r.key()).collect();
    if persisted.len() != records.len() {
        return Err(RunnerError::CorruptRunLog {
            line: 0,
            reason: "duplicate run keys in log".into(),
        });
    }

    let gold: BTreeMap<&str, GoldLabel> = articles
        .iter()
        .map(|a| {
            GoldLabel::new(taxonomy, a.id.clone(), &a.attack_types)
                .map(|g| (a.id.as_str(), g))
        })
        .collect::<Result<_, _>>()?;

    let routes = RouteTable::new(config.routes.clone())?;
    let gateway = Gateway::new(routes, config.gateway.clone());

    struct Cell<'a> {
        article: &'a ArticleRecord,
        model: &'a str,
        strategy: &'a str,
        temperature: f64,
    }
    let mut pending = Vec::new();
    let mut grid_cells = 0usize;
    for article in &articles {
        for model in &config.models {
            for strategy in &config.strategies {
                for &temperature in &config.temperatures {
                    grid_cells += 1;
                    if !persisted.contains(&run_key(&article.id, model, strategy, temperature)) {
                        pending.push(Cell {
                            article,
                            model,
                            strategy,
                            temperature,
                        });
                    }
                }
            }
        }
    }

    let new_runs = pending.len();
    let mut log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&runs_path)?;

    for chunk in pending.chunks(config.parallelism.max(1)) {
        let slots: Vec<Mutex<Option<RunRecord>>> =
            chunk.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for (cell, slot) in chunk.iter().zip(&slots) {
                let gateway = &gateway;
                let registry = &registry;
                let gold = &gold;
                scope.spawn(move || {
                    let record = execute_cell(
                        gateway,
                        taxonomy,
                        registry,
                        gold,
                        cell.article,
                        cell.model,
                        cell.strategy,
                        cell.temperature,
                        config.max_tokens,
                    );
                    *slot.lock().expect("run slot poisoned") = Some(record);
                });
            }
        });
        for slot in slots {
            let record = slot
                .into_inner()
                .expect("run slot poisoned")
                .expect("worker filled its slot");
            writeln!(
                log_file,
                "{}",
                serde_json::to_string(&record).expect("record serializes")
            )?;
            persisted.insert(record.key());
            records.push(record);
        }
        log_file.flush()?;
    }
    drop(log_file);

    let (tables, comparisons) = evaluate_records(taxonomy, &records, &gold)?;

    let f1_path = config.output_dir.join("f1.csv");
    let mut f1_bytes = Vec::new();
    export_f1_csv(&tables, &mut f1_bytes).map_err(std::io::Error::other)?;
    std::fs::write(&f1_path, &f1_bytes)?;
    std::fs::write(
        config.output_dir.join("f1.json"),
        crate::evaluation::export_f1_json(&tables),
    )?;
    let comparisons_json =
        serde_json::to_string_pretty(&comparisons).expect("comparisons serialize");
    std::fs::write(config.output_dir.join("comparisons.json"), &comparisons_json)?;

    let mut artifact_hashes = BTreeMap::new();
    artifact_hashes.insert("f1.csv".to_string(), file_sha256(&f1_path)?);
    artifact_hashes.insert(
        "comparisons.json".to_string(),
        hex(&Sha256::digest(comparisons_json.as_bytes())),
    );
    artifact_hashes.insert(RUNS_FILE_NAME.to_string(), run_log_content_hash(&records));

    let summary = ExperimentSummary {
        articles: articles.len(),
        grid_cells,
        completed_runs: records.iter().filter(|r| r.payload.is_some()).count(),
        failed_runs: records.iter().filter(|r| r.error.is_some()).count(),
        new_endpoint_runs: new_runs,
        group_macro_f1: tables
            .iter()
            .map(|t| (t.group.to_string(), t.macro_f1))
            .collect(),
        group_micro_f1: tables
            .iter()
            .map(|t| (t.group.to_string(), t.micro_f1))
            .collect(),
        artifact_hashes: artifact_hashes.clone(),
    };
    std::fs::write(
        config.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    Ok(ExperimentOutcome {
        output_dir: config.output_dir.clone(),
        records,
        tables,
        comparisons,
        new_runs,
        artifact_hashes,
    })
}

#[allow(clippy::too_many_arguments)]
fn execute_cell(
    gateway: &Gateway,
    taxonomy: &Taxonomy,
    registry: &ScorerRegistry,
    gold: &BTreeMap<&str, GoldLabel>,
    article: &ArticleRecord,
    model: &str,
    strategy_code: &str,
    temperature: f64,
    max_tokens: u32,
) -> RunRecord {
    let started_at_unix_ms = now_unix_ms();
    let strategy = parse_strategy(strategy_code).expect("config validated");
    let outcome = (|| -> Result<RunPayload, String> {
        let detection = detect(
            gateway,
            taxonomy,
            &article.id,
            &article.attack,
            model,
            strategy,
            temperature,
            max_tokens,
        )
        .map_err(|e| format!("detect: {e}"))?;
        let gold_label = gold.get(article.id.as_str()).expect("gold per article");
        let score =
            detection_score(&detection, gold_label).map_err(|e| format!("score: {e}"))?;
        let defense = defend(
            gateway,
            taxonomy,
            &article.id,
            &article.attack,
            &detection,
            model,
            temperature,
            max_tokens,
        )
        .map_err(|e| format!("defend: {e}"))?;
        let attack_sec = registry
            .score_text(&format!("{}:attack", article.id), &article.attack)
            .map_err(|e| format!("sec attack: {e}"))?;
        let inoculated_sec = registry
            .score_text(
                &format!("{}:inoculated", article.id),
                &defense.inoculated_text,
            )
            .map_err(|e| format!("sec inoculated: {e}"))?;
        Ok(RunPayload {
            detection,
            detection_score: score,
            defense: Some(defense),
            attack_sec,
            inoculated_sec: Some(inoculated_sec),
        })
    })();

    let (error, payload) = match outcome {
        Ok(payload) => (None, Some(payload)),
        Err(message) => (Some(message), None),
    };
    RunRecord {
        article_id: article.id.clone(),
        model_id: model.to_string(),
        strategy: strategy_code.to_string(),
        temperature,
        started_at_unix_ms,
        finished_at_unix_ms: now_unix_ms(),
        error,
        payload,
    }
}

/// Group successful detections by (model, strategy, temperature) and build
/// one F1 table per group plus the paired comparisons along every axis
/// that has complete pairs.
pub fn evaluate_records(
    taxonomy: &Taxonomy,
    records: &[RunRecord],
    gold: &BTreeMap<&str, GoldLabel>,
) -> Result<(Vec<F1Table>, Vec<GroupComparison>), RunnerError> {
    let mut by_group: BTreeMap<GroupKey, Vec<DetectionResult>> = BTreeMap::new();
    for record in records {
        if let Some(payload) = &record.payload {
            let key = GroupKey {
                model_id: record.model_id.clone(),
                strategy: parse_strategy(&record.strategy)
                    .ok_or_else(|| RunnerError::Config(format!(
                        "run log has unknown strategy {:?}",
                        record.strategy
                    )))?,
                temperature: record.temperature,
            };
            by_group.entry(key).or_default().push(payload.detection.clone());
        }
    }

    let mut tables = Vec::new();
    for detections in by_group.values() {
        let doc_ids: BTreeSet<&str> = detections
            .iter()
            .map(|d| d.document_id.as_str())
            .collect();
        let group_gold: Vec<GoldLabel> = doc_ids
            .iter()
            .filter_map(|id| gold.get(id).cloned())
            .collect();
        tables.push(per_type_f1(taxonomy, detections, &group_gold)?);
    }

    let mut comparisons = Vec::new();
    for axis in [
        ComparisonAxis::Strategy,
        ComparisonAxis::Confidence,
        ComparisonAxis::Temperature,
    ] {
        match compare_groups(&tables, axis) {
            Ok(report) => comparisons.push(report),
            Err(error) => log::info!("no {axis:?} comparison: {error}"),
        }
    }
    Ok((tables, comparisons))
}
