//! Socio-emotional-cognitive (SEC) signatures: a fixed vector of
//! interpretable text measures used as outcomes and covariates by the
//! causal assessors.
//!
//! Scoring is pluggable. The built-in lexicon scorer covers every measure
//! deterministically; an LLM scorer can override any subset per registry
//! semantics (later registrations win per measure).

pub mod lexicon;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway};
use crate::prompt::RenderedPrompt;

pub use lexicon::LexiconScorer;

/// Whether a measure lives on [0, 1] or [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeKind {
    Unit,
    Signed,
}

impl RangeKind {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RangeKind::Unit => (0.0, 1.0),
            RangeKind::Signed => (-1.0, 1.0),
        }
    }
}

macro_rules! measures {
    ($(($variant:ident, $name:literal, $kind:ident)),+ $(,)?) => {
        /// The canonical SEC measure set.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum SecMeasure {
            $($variant),+
        }

        impl SecMeasure {
            pub const ALL: &'static [SecMeasure] = &[$(SecMeasure::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(SecMeasure::$variant => $name),+
                }
            }

            pub fn range_kind(self) -> RangeKind {
                match self {
                    $(SecMeasure::$variant => RangeKind::$kind),+
                }
            }

            pub fn from_name(name: &str) -> Option<SecMeasure> {
                match name {
                    $($name => Some(SecMeasure::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

measures![
    (Attitude, "Attitude", Signed),
    (Sentiment, "Sentiment", Signed),
    (EmotionSadness, "Emotion:Sadness", Unit),
    (IntentAgreeing, "Intent:Agreeing", Unit),
    (MoralAuthority, "Moral:Authority", Unit),
    (MoralFairness, "Moral:Fairness", Unit),
    (MoralHarm, "Moral:Harm", Unit),
    (MoralIngroup, "Moral:Ingroup", Unit),
    (MoralPurity, "Moral:Purity", Unit),
    (Morality, "Morality", Unit),
    (PerspectivePositive, "Perspective:Positive", Unit),
    (PerspectiveNeutral, "Perspective:Neutral", Unit),
    (PerspectiveNegative, "Perspective:Negative", Unit),
    (Toxicity, "Toxicity", Unit),
    (Subjectivity, "Subjectivity", Unit),
    (Empathy, "Empathy", Unit),
];

impl std::fmt::Display for SecMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for SecMeasure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SecMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        SecMeasure::from_name(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown SEC measure {s:?}")))
    }
}

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// The full measure vector for one text, with per-measure scorer
/// provenance. A signature with entries in `failures` is partial and must
/// not enter causal datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecSignature {
    pub text_id: String,
    pub scores: BTreeMap<String, f64>,
    pub scorer_provenance: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<String, String>,
}

impl SecSignature {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn get(&self, measure: SecMeasure) -> Option<f64> {
        self.scores.get(measure.name()).copied()
    }

    /// Check completeness, range containment, and the perspective simplex.
    pub fn validate(&self) -> Result<(), SecError> {
        for &m in SecMeasure::ALL {
            let v = self.scores.get(m.name()).copied().ok_or_else(|| {
                SecError::InvalidSignature(format!("missing measure {:?}", m.name()))
            })?;
            let (lo, hi) = m.range_kind().bounds();
            if !v.is_finite() || v < lo || v > hi {
                return Err(SecError::InvalidSignature(format!(
                    "{:?} = {v} outside [{lo}, {hi}]",
                    m.name()
                )));
            }
        }
        let sum = self.get(SecMeasure::PerspectivePositive).unwrap()
            + self.get(SecMeasure::PerspectiveNeutral).unwrap()
            + self.get(SecMeasure::PerspectiveNegative).unwrap();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(SecError::InvalidSignature(format!(
                "perspective distribution sums to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SecError {
    #[error("no scorer registered for: {}", missing.join(", "))]
    UncoveredMeasure { missing: Vec<String> },
    #[error("scorer {id:?} rejected: {reason}")]
    InvalidScorer { id: String, reason: String },
    #[error("scorer failed on {measure}: {reason}")]
    ScorerFailure { measure: String, reason: String },
    #[error("bad lexicon {name:?}: {reason}")]
    InvalidLexicon { name: String, reason: String },
    #[error("invalid signature: {0}")]
    InvalidSignature(String),
}

/// A scoring backend for some subset of the canonical measures.
pub trait Scorer: Send + Sync {
    /// Stable identifier recorded as provenance (should change when the
    /// scorer's data or model changes).
    fn id(&self) -> String;
    fn covers(&self) -> Vec<SecMeasure>;
    fn score(&self, measure: SecMeasure, text: &str) -> Result<f64, SecError>;
}

/// Measure-to-scorer assignment. Later registrations override earlier ones
/// for the measures they cover.
#[derive(Clone, Default)]
pub struct ScorerRegistry {
    assigned: BTreeMap<SecMeasure, Arc<dyn Scorer>>,
}

impl ScorerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry fully covered by the built-in lexicon scorer.
    pub fn with_builtin_lexicon() -> Self {
        let mut registry = Self::new();
        registry
            .register(LexiconScorer::builtin())
            .expect("builtin lexicon covers measures");
        registry
    }

    pub fn register(&mut self, scorer: Arc<dyn Scorer>) -> Result<(), SecError> {
        let covered = scorer.covers();
        if covered.is_empty() {
            return Err(SecError::InvalidScorer {
                id: scorer.id(),
                reason: "covers no canonical measure".into(),
            });
        }
        for m in covered {
            self.assigned.insert(m, Arc::clone(&scorer));
        }
        Ok(())
    }

    /// Every canonical measure must be covered, and the three Perspective
    /// measures must share one scorer so the simplex stays coherent.
    pub fn validate(&self) -> Result<(), SecError> {
        let missing: Vec<String> = SecMeasure::ALL
            .iter()
            .filter(|m| !self.assigned.contains_key(m))
            .map(|m| m.name().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(SecError::UncoveredMeasure { missing });
        }
        let trio = [
            SecMeasure::PerspectivePositive,
            SecMeasure::PerspectiveNeutral,
            SecMeasure::PerspectiveNegative,
        ];
        let ids: Vec<String> = trio.iter().map(|m| self.assigned[m].id()).collect();
        if ids.iter().any(|i| *i != ids[0]) {
            return Err(SecError::InvalidScorer {
                id: ids.join(" / "),
                reason: "Perspective measures must come from a single scorer".into(),
            });
        }
        Ok(())
    }

    pub fn provenance(&self, measure: SecMeasure) -> Option<String> {
        self.assigned.get(&measure).map(|s| s.id())
    }

    /// Score every canonical measure. Individual scorer failures are
    /// recorded in the signature (making it partial) rather than aborting.
    pub fn score_text(&self, text_id: &str, text: &str) -> Result<SecSignature, SecError> {
        self.validate()?;
        let mut scores = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        let mut failures = BTreeMap::new();
        for &measure in SecMeasure::ALL {
            let scorer = &self.assigned[&measure];
            match scorer.score(measure, text) {
                Ok(v) => {
                    let (lo, hi) = measure.range_kind().bounds();
                    if v.is_finite() && (lo..=hi).contains(&v) {
                        scores.insert(measure.name().to_string(), v);
                        provenance.insert(measure.name().to_string(), scorer.id());
                    } else {
                        failures.insert(
                            measure.name().to_string(),
                            format!("score {v} outside [{lo}, {hi}]"),
                        );
                    }
                }
                Err(e) => {
                    failures.insert(measure.name().to_string(), e.to_string());
                }
            }
        }
        let mut signature = SecSignature {
            text_id: text_id.to_string(),
            scores,
            scorer_provenance: provenance,
            failures,
        };
        repair_perspective_simplex(&mut signature);
        Ok(signature)
    }
}

/// Renormalize the perspective trio when a scorer produced an incoherent
/// distribution; exact by construction for the built-in lexicon, so this
/// only touches foreign scorers' drift.
fn repair_perspective_simplex(signature: &mut SecSignature) {
    let trio = [
        SecMeasure::PerspectivePositive,
        SecMeasure::PerspectiveNeutral,
        SecMeasure::PerspectiveNegative,
    ];
    let values: Option<Vec<f64>> = trio.iter().map(|m| signature.get(*m)).collect();
    let Some(values) = values else { return };
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() <= SIMPLEX_TOLERANCE {
        return;
    }
    let (pos, neu, neg) = if sum > 1e-12 {
        let pos = values[0] / sum;
        let neg = values[2] / sum;
        (pos, 1.0 - pos - neg, neg)
    } else {
        (0.0, 1.0, 0.0)
    };
    for (m, v) in trio.iter().zip([pos, neu, neg]) {
        signature.scores.insert(m.name().to_string(), v);
    }
}

/// Parse an LLM's 0..=100 rating into `measure`'s range. Returns the score
/// and whether clamping was needed (kept for audit logging).
pub fn parse_llm_score(measure: SecMeasure, raw: &str) -> Result<(f64, bool), SecError> {
    static FIRST_INT: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let pattern = FIRST_INT.get_or_init(|| regex::Regex::new(r"-?\d+").expect("pattern compiles"));
    let value: i64 = pattern
        .find(raw)
        .and_then(|m| m.as_str().parse().ok())
        .ok_or_else(|| SecError::ScorerFailure {
            measure: measure.name().to_string(),
            reason: format!("no integer in response {raw:?}"),
        })?;
    let clamped = !(0..=100).contains(&value);
    let v = value.clamp(0, 100) as f64;
    let score = match measure.range_kind() {
        RangeKind::Unit => v / 100.0,
        RangeKind::Signed => v / 50.0 - 1.0,
    };
    Ok((score, clamped))
}

/// Scorer that asks a routed model to rate each covered measure on a 0-100
/// scale. Gateway errors surface as per-measure scorer failures.
pub struct LlmScorer {
    gateway: Arc<Gateway>,
    model_id: String,
    temperature: f64,
    max_tokens: u32,
    covered: Vec<SecMeasure>,
}

impl LlmScorer {
    pub fn new(
        gateway: Arc<Gateway>,
        model_id: impl Into<String>,
        covered: Vec<SecMeasure>,
    ) -> Self {
        Self {
            gateway,
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: 16,
            covered,
        }
    }

    fn rating_prompt(measure: SecMeasure, text: &str) -> String {
        let scale = match measure.range_kind() {
            RangeKind::Unit => "where 0 means none at all and 100 means maximal",
            RangeKind::Signed => "where 0 means maximally negative and 100 means maximally positive",
        };
        format!(
            "Rate the {} of the following text on a scale of 0 to 100, {scale}. Respond with a single integer only.\nText: {text}",
            measure.name()
        )
    }
}

impl Scorer for LlmScorer {
    fn id(&self) -> String {
        format!("llm:{}", self.model_id)
    }

    fn covers(&self) -> Vec<SecMeasure> {
        self.covered.clone()
    }

    fn score(&self, measure: SecMeasure, text: &str) -> Result<f64, SecError> {
        let prompt = RenderedPrompt {
            text: Self::rating_prompt(measure, text),
            strategy: None,
            taxonomy_hash: String::new(),
        };
        let request = CompletionRequest::new(
            &self.model_id,
            prompt,
            self.temperature,
            self.max_tokens,
            format!("sec:{}", measure.name()),
        )
        .map_err(|e| SecError::ScorerFailure {
            measure: measure.name().to_string(),
            reason: e.to_string(),
        })?;
        let completion = self.gateway.complete(&request).map_err(|e| SecError::ScorerFailure {
            measure: measure.name().to_string(),
            reason: e.to_string(),
        })?;
        let (score, clamped) = parse_llm_score(measure, &completion.raw_text)?;
        if clamped {
            log::warn!(
                "llm scorer clamped out-of-scale rating {:?} for {}",
                completion.raw_text.trim(),
                measure.name()
            );
        }
        Ok(score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{DefaultResponder, MockRule, MockScript, MockServer};
    use crate::gateway::{GatewaySettings, ModelRoute, RouteTable};

    struct FixedScorer {
        id: String,
        covered: Vec<SecMeasure>,
        value: f64,
    }

    impl Scorer for FixedScorer {
        fn id(&self) -> String {
            self.id.clone()
        }
        fn covers(&self) -> Vec<SecMeasure> {
            self.covered.clone()
        }
        fn score(&self, _measure: SecMeasure, _text: &str) -> Result<f64, SecError> {
            Ok(self.value)
        }
    }

    #[test]
    fn measure_set_has_sixteen_entries_with_declared_ranges() {
        assert_eq!(SecMeasure::ALL.len(), 16);
        assert_eq!(SecMeasure::Attitude.range_kind(), RangeKind::Signed);
        assert_eq!(SecMeasure::Sentiment.range_kind(), RangeKind::Signed);
        for &m in SecMeasure::ALL {
            if m != SecMeasure::Attitude && m != SecMeasure::Sentiment {
                assert_eq!(m.range_kind(), RangeKind::Unit, "{m}");
            }
            assert_eq!(SecMeasure::from_name(m.name()), Some(m));
        }
    }

    #[test]
    fn empty_registry_reports_all_measures_uncovered() {
        let registry = ScorerRegistry::new();
        match registry.validate() {
            Err(SecError::UncoveredMeasure { missing }) => {
                assert_eq!(missing.len(), 16);
                assert!(missing.contains(&"Perspective:Neutral".to_string()));
            }
            other => panic!("expected UncoveredMeasure, got {other:?}"),
        }
    }

    #[test]
    fn builtin_lexicon_registry_is_valid() {
        let registry = ScorerRegistry::with_builtin_lexicon();
        registry.validate().unwrap();
        let signature = registry.score_text("t", "The law demands fairness.").unwrap();
        signature.validate().unwrap();
        assert!(signature.is_complete());
    }

    #[test]
    fn override_changes_provenance_for_one_measure() {
        let mut registry = ScorerRegistry::with_builtin_lexicon();
        let before = registry.provenance(SecMeasure::Empathy).unwrap();
        registry
            .register(Arc::new(FixedScorer {
                id: "probe".into(),
                covered: vec![SecMeasure::Empathy],
                value: 0.5,
            }))
            .unwrap();
        assert_eq!(registry.provenance(SecMeasure::Empathy).unwrap(), "probe");
        assert_eq!(registry.provenance(SecMeasure::Toxicity).unwrap(), before);

        let signature = registry.score_text("t", "whatever text").unwrap();
        assert_eq!(signature.get(SecMeasure::Empathy), Some(0.5));
        assert_eq!(signature.scorer_provenance["Empathy"], "probe");
        assert_eq!(signature.scorer_provenance["Toxicity"], before);
    }

    #[test]
    fn scorer_covering_nothing_is_rejected() {
        let mut registry = ScorerRegistry::new();
        let err = registry
            .register(Arc::new(FixedScorer {
                id: "empty".into(),
                covered: vec![],
                value: 0.0,
            }))
            .unwrap_err();
        assert!(matches!(err, SecError::InvalidScorer { .. }));
    }

    #[test]
    fn split_perspective_trio_is_rejected() {
        let mut registry = ScorerRegistry::with_builtin_lexicon();
        registry
            .register(Arc::new(FixedScorer {
                id: "partial".into(),
                covered: vec![SecMeasure::PerspectivePositive],
                value: 0.2,
            }))
            .unwrap();
        assert!(matches!(
            registry.validate(),
            Err(SecError::InvalidScorer { .. })
        ));
    }

    #[test]
    fn out_of_range_scorer_output_marks_the_signature_partial() {
        let mut registry = ScorerRegistry::with_builtin_lexicon();
        registry
            .register(Arc::new(FixedScorer {
                id: "broken".into(),
                covered: vec![SecMeasure::Toxicity],
                value: 3.5,
            }))
            .unwrap();
        let signature = registry.score_text("t", "hello").unwrap();
        assert!(!signature.is_complete());
        assert!(signature.failures.contains_key("Toxicity"));
        assert!(!signature.scores.contains_key("Toxicity"));
    }

    #[test]
    fn incoherent_foreign_perspective_trio_is_renormalized() {
        let mut registry = ScorerRegistry::with_builtin_lexicon();
        registry
            .register(Arc::new(FixedScorer {
                id: "trio".into(),
                covered: vec![
                    SecMeasure::PerspectivePositive,
                    SecMeasure::PerspectiveNeutral,
                    SecMeasure::PerspectiveNegative,
                ],
                value: 0.5,
            }))
            .unwrap();
        let signature = registry.score_text("t", "hello").unwrap();
        signature.validate().unwrap();
        let pos = signature.get(SecMeasure::PerspectivePositive).unwrap();
        assert!((pos - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn llm_score_parsing_and_rescaling() {
        let (v, clamped) = parse_llm_score(SecMeasure::Toxicity, "85").unwrap();
        assert_eq!(v, 0.85);
        assert!(!clamped);

        let (v, clamped) = parse_llm_score(SecMeasure::Toxicity, "120").unwrap();
        assert_eq!(v, 1.0);
        assert!(clamped);

        let (v, _) = parse_llm_score(SecMeasure::Sentiment, "50").unwrap();
        assert_eq!(v, 0.0);
        let (v, _) = parse_llm_score(SecMeasure::Sentiment, "0").unwrap();
        assert_eq!(v, -1.0);

        let (v, clamped) = parse_llm_score(SecMeasure::Empathy, "Rating: 40 out of 100").unwrap();
        assert_eq!(v, 0.4);
        assert!(!clamped);

        assert!(matches!(
            parse_llm_score(SecMeasure::Toxicity, "very toxic"),
            Err(SecError::ScorerFailure { .. })
        ));
    }

    #[test]
    fn llm_scorer_overrides_one_measure_through_the_gateway() {
        let script = MockScript {
            rules: vec![MockRule::on(vec!["Rate the Empathy".into()], "73")],
            default: DefaultResponder::Fixed("0".into()),
            ..MockScript::default()
        };
        let server = MockServer::start(script);
        let routes = RouteTable::new(vec![ModelRoute {
            model_id: "rater".into(),
            base_url: server.base_url(),
            api_key_env: String::new(),
            default_temperature: 0.0,
        }])
        .unwrap();
        let gateway = Arc::new(Gateway::new(routes, GatewaySettings::default()));

        let mut registry = ScorerRegistry::with_builtin_lexicon();
        registry
            .register(Arc::new(LlmScorer::new(
                gateway,
                "rater",
                vec![SecMeasure::Empathy],
            )))
            .unwrap();
        let signature = registry.score_text("t", "I am sorry for your loss.").unwrap();
        assert!(signature.is_complete());
        assert_eq!(signature.get(SecMeasure::Empathy), Some(0.73));
        assert_eq!(signature.scorer_provenance["Empathy"], "llm:rater");
    }

    #[test]
    fn gateway_failure_becomes_scorer_failure() {
        let routes = RouteTable::new(vec![]).unwrap();
        let gateway = Arc::new(Gateway::new(routes, GatewaySettings::default()));
        let mut registry = ScorerRegistry::with_builtin_lexicon();
        registry
            .register(Arc::new(LlmScorer::new(
                gateway,
                "missing-model",
                vec![SecMeasure::Empathy],
            )))
            .unwrap();
        let signature = registry.score_text("t", "hello").unwrap();
        assert!(!signature.is_complete());
        assert!(signature.failures["Empathy"].contains("missing-model"));
    }
}
