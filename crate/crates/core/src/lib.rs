//! Persuasion-attack detection, content inoculation, and causal
//! effectiveness measurement.
//!
//! The pipeline has three stages: a Detector labels persuasion techniques
//! in text, a Defender rewrites the text to neutralize them, and Assessor
//! tools (structural equation modeling over learned DAGs, double-ML
//! treatment effects) quantify what the rewrite changed.

pub mod agents;
pub mod dml;
pub mod evaluation;
pub mod gateway;
pub mod notears;
pub mod prompt;
pub mod runner;
pub mod sec;
pub mod taxonomy;

pub use agents::{
    defend, detect, format_detection, parse_detection, AgentError, DefenseResult, DetectedAttack,
    DetectionResult,
};
pub use dml::{
    estimate_ate, export_sweep_csv, export_sweep_json, forest::fit_forest,
    forest::ForestParams, forest::RegressionForest, ridge::fit_ridge, ridge::RidgeModel,
    run_treatment_sweep, AteEstimate, AteProblem, DmlError, FoldResidualStats, NuisanceLearner,
    SweepConfig, SweepItem, ATE_CSV_HEADER,
};
pub use evaluation::{
    compare_groups, detection_score, export_f1_csv, export_f1_json, per_type_f1,
    per_type_f1_with_cutoff, ComparisonAxis, EvalError, F1Row, F1Table, GoldLabel,
    GroupComparison, GroupKey,
};
pub use gateway::{
    CompletionRequest, CompletionResult, Gateway, GatewayError, GatewaySettings, ModelRoute,
    RouteTable,
};
pub use notears::{
    acyclicity, acyclicity_gradient, export_dag_json, export_edges_csv, fit, fit_with_tabu,
    matrix_exponential, CausalDataset, Edge, NotearsConfig, NotearsError, WeightedDag,
    HEADLINE_OMEGA, SEM_EDGE_CSV_HEADER,
};
pub use prompt::{
    build_defender_prompt, build_detector_prompt, PromptError, PromptStrategy, RenderedPrompt,
};
pub use runner::{
    assess, build_causal_dataset, load_dataset, run_experiment, write_assess_reports,
    ArticleRecord, AssessReport, AssessorSettings, CausalBuild, DatasetError, EffectPair,
    ExperimentConfig, ExperimentOutcome, LearnerChoice, RunPayload, RunRecord, RunnerError,
    TreatmentAxis,
};
pub use sec::{
    LexiconScorer, LlmScorer, RangeKind, Scorer, ScorerRegistry, SecError, SecMeasure,
    SecSignature,
};
pub use taxonomy::{AttackType, Taxonomy, TaxonomyError};
