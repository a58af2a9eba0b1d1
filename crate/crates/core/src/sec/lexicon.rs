//! Deterministic bag-of-words scorer over committed term lists.
//!
//! Tokens are maximal runs of alphanumeric characters, lowercased. A term
//! list holds one lowercase term per line; a trailing `*` makes the term a
//! prefix. Unit measures score hits / total tokens; signed measures score
//! (positive hits - negative hits) / total tokens; the Perspective trio is
//! a distribution over (positive, neutral, negative) with a neutral floor
//! of one token-mass, so it sums to one even for empty text.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use sha2::{Digest, Sha256};

use super::{Scorer, SecError, SecMeasure};

const LEXICON_FILES: [(&str, &str); 17] = [
    ("attitude_negative", include_str!("../../data/lexicons/attitude_negative.txt")),
    ("attitude_positive", include_str!("../../data/lexicons/attitude_positive.txt")),
    ("emotion_sadness", include_str!("../../data/lexicons/emotion_sadness.txt")),
    ("empathy", include_str!("../../data/lexicons/empathy.txt")),
    ("intent_agreeing", include_str!("../../data/lexicons/intent_agreeing.txt")),
    ("moral_authority", include_str!("../../data/lexicons/moral_authority.txt")),
    ("moral_fairness", include_str!("../../data/lexicons/moral_fairness.txt")),
    ("moral_harm", include_str!("../../data/lexicons/moral_harm.txt")),
    ("moral_ingroup", include_str!("../../data/lexicons/moral_ingroup.txt")),
    ("moral_purity", include_str!("../../data/lexicons/moral_purity.txt")),
    ("morality", include_str!("../../data/lexicons/morality.txt")),
    ("perspective_negative", include_str!("../../data/lexicons/perspective_negative.txt")),
    ("perspective_positive", include_str!("../../data/lexicons/perspective_positive.txt")),
    ("sentiment_negative", include_str!("../../data/lexicons/sentiment_negative.txt")),
    ("sentiment_positive", include_str!("../../data/lexicons/sentiment_positive.txt")),
    ("subjectivity", include_str!("../../data/lexicons/subjectivity.txt")),
    ("toxicity", include_str!("../../data/lexicons/toxicity.txt")),
];

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone)]
struct TermList {
    exact: BTreeSet<String>,
    prefixes: Vec<String>,
}

impl TermList {
    fn parse(name: &str, source: &str) -> Result<Self, SecError> {
        let mut exact = BTreeSet::new();
        let mut prefixes = Vec::new();
        let mut seen = BTreeSet::new();
        for line in source.lines() {
            let term = line.trim();
            if term.is_empty() {
                continue;
            }
            if !seen.insert(term.to_string()) {
                return Err(SecError::InvalidLexicon {
                    name: name.into(),
                    reason: format!("duplicate term {term:?}"),
                });
            }
            let (stem, is_prefix) = match term.strip_suffix('*') {
                Some(stem) => (stem, true),
                None => (term, false),
            };
            let well_formed = !stem.is_empty()
                && stem.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit());
            if !well_formed {
                return Err(SecError::InvalidLexicon {
                    name: name.into(),
                    reason: format!("term {term:?} is not lowercase alphanumeric"),
                });
            }
            if is_prefix {
                if stem.len() < 3 {
                    return Err(SecError::InvalidLexicon {
                        name: name.into(),
                        reason: format!("prefix {term:?} shorter than 3 characters"),
                    });
                }
                prefixes.push(stem.to_string());
            } else {
                exact.insert(stem.to_string());
            }
        }
        if exact.is_empty() && prefixes.is_empty() {
            return Err(SecError::InvalidLexicon {
                name: name.into(),
                reason: "empty term list".into(),
            });
        }
        Ok(Self { exact, prefixes })
    }

    /// Token occurrences matching this list; each token instance counts at
    /// most once.
    fn hits(&self, tokens: &[String]) -> usize {
        tokens
            .iter()
            .filter(|t| {
                self.exact.contains(t.as_str())
                    || self.prefixes.iter().any(|p| t.starts_with(p.as_str()))
            })
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct LexiconScorer {
    lists: std::collections::BTreeMap<&'static str, TermList>,
    id: String,
}

impl LexiconScorer {
    pub fn from_embedded() -> Result<Self, SecError> {
        let mut lists = std::collections::BTreeMap::new();
        let mut hasher = Sha256::new();
        for (name, source) in LEXICON_FILES {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update(source.as_bytes());
            lists.insert(name, TermList::parse(name, source)?);
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            lists,
            id: format!("lexicon:{hex}"),
        })
    }

    pub fn builtin() -> Arc<LexiconScorer> {
        static BUILTIN: OnceLock<Arc<LexiconScorer>> = OnceLock::new();
        Arc::clone(BUILTIN.get_or_init(|| {
            Arc::new(LexiconScorer::from_embedded().expect("embedded lexicons are well formed"))
        }))
    }

    fn list(&self, name: &str) -> &TermList {
        &self.lists[name]
    }

    fn unit(&self, list: &str, tokens: &[String]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        (self.list(list).hits(tokens) as f64 / tokens.len() as f64).clamp(0.0, 1.0)
    }

    fn signed(&self, positive: &str, negative: &str, tokens: &[String]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        let p = self.list(positive).hits(tokens) as f64;
        let n = self.list(negative).hits(tokens) as f64;
        ((p - n) / tokens.len() as f64).clamp(-1.0, 1.0)
    }

    fn perspective(&self, measure: SecMeasure, tokens: &[String]) -> f64 {
        let p = self.list("perspective_positive").hits(tokens) as f64;
        let n = self.list("perspective_negative").hits(tokens) as f64;
        let denominator = p + n + 1.0;
        match measure {
            SecMeasure::PerspectivePositive => p / denominator,
            SecMeasure::PerspectiveNegative => n / denominator,
            SecMeasure::PerspectiveNeutral => 1.0 - p / denominator - n / denominator,
            _ => unreachable!("perspective() called for {measure}"),
        }
    }
}

impl Scorer for LexiconScorer {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn covers(&self) -> Vec<SecMeasure> {
        SecMeasure::ALL.to_vec()
    }

    fn score(&self, measure: SecMeasure, text: &str) -> Result<f64, SecError> {
        let tokens = tokenize(text);
        let score = match measure {
            SecMeasure::Attitude => self.signed("attitude_positive", "attitude_negative", &tokens),
            SecMeasure::Sentiment => {
                self.signed("sentiment_positive", "sentiment_negative", &tokens)
            }
            SecMeasure::EmotionSadness => self.unit("emotion_sadness", &tokens),
            SecMeasure::IntentAgreeing => self.unit("intent_agreeing", &tokens),
            SecMeasure::MoralAuthority => self.unit("moral_authority", &tokens),
            SecMeasure::MoralFairness => self.unit("moral_fairness", &tokens),
            SecMeasure::MoralHarm => self.unit("moral_harm", &tokens),
            SecMeasure::MoralIngroup => self.unit("moral_ingroup", &tokens),
            SecMeasure::MoralPurity => self.unit("moral_purity", &tokens),
            SecMeasure::Morality => self.unit("morality", &tokens),
            SecMeasure::PerspectivePositive
            | SecMeasure::PerspectiveNeutral
            | SecMeasure::PerspectiveNegative => self.perspective(measure, &tokens),
            SecMeasure::Toxicity => self.unit("toxicity", &tokens),
            SecMeasure::Subjectivity => self.unit("subjectivity", &tokens),
            SecMeasure::Empathy => self.unit("empathy", &tokens),
        };
        debug_assert!({
            let (lo, hi) = measure.range_kind().bounds();
            (lo..=hi).contains(&score)
        });
        Ok(score)
    }
}
