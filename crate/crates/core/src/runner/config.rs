//! Experiment configuration: the run matrix, endpoint routes, and assessor
//! settings, read from a TOML file.

use super::RunnerError;
use crate::dml::{forest::ForestParams, NuisanceLearner};
use crate::gateway::{GatewaySettings, ModelRoute};
use crate::prompt::PromptStrategy;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub models: Vec<String>,
    /// Strategy codes: "0", "d0", "s0", "d0s0".
    pub strategies: Vec<String>,
    pub temperatures: Vec<f64>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// One route per model; optional in the file when every model is
    /// served by the mock endpoint.
    #[serde(default)]
    pub routes: Vec<ModelRoute>,
    #[serde(default)]
    pub gateway: GatewaySettings,
    #[serde(default)]
    pub assessor: AssessorSettings,
}

fn default_parallelism() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerChoice {
    Forest,
    Ridge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessorSettings {
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_learner")]
    pub learner: LearnerChoice,
    #[serde(default = "default_ridge_penalty")]
    pub ridge_penalty: f64,
    #[serde(default = "default_forest_trees")]
    pub forest_trees: usize,
    /// Outcome columns to sweep; empty means every non-treatment column.
    #[serde(default)]
    pub outcomes: Vec<String>,
    #[serde(default = "default_axis")]
    pub treatment_axis: super::TreatmentAxis,
}

fn default_lambda1() -> f64 {
    0.1
}
fn default_omega() -> f64 {
    0.05
}
fn default_folds() -> usize {
    5
}
fn default_learner() -> LearnerChoice {
    LearnerChoice::Forest
}
fn default_ridge_penalty() -> f64 {
    1.0
}
fn default_forest_trees() -> usize {
    100
}
fn default_axis() -> super::TreatmentAxis {
    super::TreatmentAxis::Llm
}

impl Default for AssessorSettings {
    fn default() -> Self {
        Self {
            lambda1: default_lambda1(),
            omega: default_omega(),
            folds: default_folds(),
            learner: default_learner(),
            ridge_penalty: default_ridge_penalty(),
            forest_trees: default_forest_trees(),
            outcomes: Vec::new(),
            treatment_axis: default_axis(),
        }
    }
}

impl AssessorSettings {
    pub fn nuisance_learner(&self, seed: u64) -> NuisanceLearner {
        match self.learner {
            LearnerChoice::Forest => NuisanceLearner::Forest(ForestParams {
                n_trees: self.forest_trees,
                seed,
                ..ForestParams::default()
            }),
            LearnerChoice::Ridge => NuisanceLearner::Ridge {
                penalty: self.ridge_penalty,
            },
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file. Validation is separate so callers can apply
    /// overrides (output dir, seed, mock routes) before checking.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunnerError::ConfigIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| RunnerError::ConfigIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.models.is_empty() {
            return Err(RunnerError::Config("at least one model is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(RunnerError::Config(
                "at least one strategy is required".into(),
            ));
        }
        if self.temperatures.is_empty() {
            return Err(RunnerError::Config(
                "at least one temperature is required".into(),
            ));
        }
        for code in &self.strategies {
            if parse_strategy(code).is_none() {
                return Err(RunnerError::Config(format!(
                    "unknown strategy code {code:?}; expected one of 0, d0, s0, d0s0"
                )));
            }
        }
        for &t in &self.temperatures {
            if !(0.0..=2.0).contains(&t) {
                return Err(RunnerError::Config(format!(
                    "temperature {t} outside [0, 2]"
                )));
            }
        }
        if self.parallelism == 0 {
            return Err(RunnerError::Config("parallelism must be at least 1".into()));
        }
        for model in &self.models {
            if !self.routes.iter().any(|r| &r.model_id == model) {
                return Err(RunnerError::Config(format!(
                    "model {model:?} has no route"
                )));
            }
        }
        if self.assessor.folds < 2 {
            return Err(RunnerError::Config(
                "assessor.folds must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Point every route at one base URL and drop credential requirements;
    /// the mock-endpoint toggle.
    pub fn rebase_routes(&mut self, base_url: &str) {
        for route in &mut self.routes {
            route.base_url = base_url.to_string();
            route.api_key_env.clear();
        }
    }

    pub fn snapshot_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolved_strategies(&self) -> Vec<PromptStrategy> {
        self.strategies
            .iter()
            .map(|code| parse_strategy(code).expect("validated"))
            .collect()
    }
}

pub fn parse_strategy(code: &str) -> Option<PromptStrategy> {
    PromptStrategy::from_code(code)
}
