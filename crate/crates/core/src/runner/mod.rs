//! Config-driven experiment pipeline: load articles, run the
//! detect -> score -> defend -> SEC grid against configured endpoints,
//! persist crash-resumable run records, emit evaluation tables, and hand
//! the resulting causal dataset to the structure and effect assessors.

pub mod assess;
pub mod causal;
pub mod config;
pub mod dataset;
pub mod experiment;

pub use assess::{
    assess, fit_structure, sweep_outcomes, write_assess_reports, AssessReport, EffectPair,
};
pub use causal::{build_causal_dataset, CausalBuild, TreatmentAxis};
pub use config::{AssessorSettings, ExperimentConfig, LearnerChoice};
pub use dataset::{load_dataset, ArticleRecord, DatasetError};
pub use experiment::{
    load_run_log, run_experiment, ExperimentOutcome, RunPayload, RunRecord, RUNS_FILE_NAME,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("config: {0}")]
    Config(String),
    #[error("config file {path}: {reason}")]
    ConfigIo { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("output directory is locked by {path}; remove it if no other run is active")]
    LockHeld { path: String },
    #[error("run log line {line}: {reason}")]
    CorruptRunLog { line: usize, reason: String },
    #[error("no error-free run records to build a causal dataset from")]
    EmptyAfterFiltering,
    #[error("causal structure: {0}")]
    Causal(#[from] crate::notears::NotearsError),
    #[error("effect estimation: {0}")]
    Dml(#[from] crate::dml::DmlError),
    #[error("evaluation: {0}")]
    Eval(#[from] crate::evaluation::EvalError),
    #[error("gateway: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("scoring: {0}")]
    Sec(#[from] crate::sec::SecError),
}
