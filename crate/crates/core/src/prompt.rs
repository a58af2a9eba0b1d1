//! Deterministic prompt rendering for the detector strategy grid and the
//! defender rewrite instruction.
//!
//! Rendering is a pure function of (strategy, taxonomy content, input text):
//! no clock, randomness, or I/O. Golden files under `tests/golden/` pin the
//! exact bytes of every variant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

/// Detector prompt skeleton; `{list}` and `{doc}` are filled per strategy.
pub const DETECTOR_TEMPLATE_HEAD: &str =
    "Identify any logical fallacies in the following text. Here is a list of common fallacies to consider: ";

/// Appended when the strategy requests confidence scoring.
pub const CONFIDENCE_INSTRUCTION: &str = "For each fallacy you identify, rate your confidence on a scale of 1 to 10 and respond with one line per fallacy in the format \"attack - score: #\".";

/// Defender rewrite instruction; original text and detector output follow on
/// their own lines.
pub const DEFENDER_TEMPLATE: &str = "Read the original text and the list of fallacies found within the text and then rewrite the text to correct the issues. Make sure the rewritten text retains all of the same information as the original text. Only respond with the rewritten text. Do not add explanations or formatting.";

/// One cell of the 2x2 detector strategy grid: attack descriptions on/off
/// crossed with confidence scoring on/off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptStrategy {
    pub with_descriptions: bool,
    pub with_confidence: bool,
}

impl PromptStrategy {
    pub const BASE: Self = Self {
        with_descriptions: false,
        with_confidence: false,
    };
    pub const DESCRIPTIONS: Self = Self {
        with_descriptions: true,
        with_confidence: false,
    };
    pub const CONFIDENCE: Self = Self {
        with_descriptions: false,
        with_confidence: true,
    };
    pub const COMBINED: Self = Self {
        with_descriptions: true,
        with_confidence: true,
    };

    /// All four grid cells, in a fixed order.
    pub fn all() -> [Self; 4] {
        [Self::BASE, Self::DESCRIPTIONS, Self::CONFIDENCE, Self::COMBINED]
    }

    /// Short code used in configs, file names, and CSV exports.
    pub fn code(self) -> &'static str {
        match (self.with_descriptions, self.with_confidence) {
            (false, false) => "0",
            (true, false) => "d0",
            (false, true) => "s0",
            (true, true) => "d0s0",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "0" => Some(Self::BASE),
            "d0" => Some(Self::DESCRIPTIONS),
            "s0" => Some(Self::CONFIDENCE),
            "d0s0" => Some(Self::COMBINED),
            _ => None,
        }
    }
}

impl std::fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for PromptStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for PromptStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        Self::from_code(&code).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "unknown strategy code {code:?} (expected 0, d0, s0, or d0s0)"
            ))
        })
    }
}

/// A fully rendered prompt plus the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// `None` for the defender prompt, which is strategy-independent.
    pub strategy: Option<PromptStrategy>,
    /// SHA-256 of the taxonomy content the fallacy list came from.
    pub taxonomy_hash: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("document text is empty")]
    EmptyDocument,
}

/// Render the detector prompt for one strategy and document.
///
/// The base list is the comma-separated canonical display names; the
/// description variant replaces it with one `Name: description` line per
/// attack, preserving canonical order.
pub fn build_detector_prompt(
    taxonomy: &Taxonomy,
    strategy: PromptStrategy,
    text: &str,
) -> Result<RenderedPrompt, PromptError> {
    if text.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    let attacks = taxonomy.canonical_attacks();
    let list = if strategy.with_descriptions {
        let lines: Vec<String> = attacks
            .iter()
            .map(|t| format!("{}: {}", t.display_name, t.description))
            .collect();
        format!("\n{}", lines.join("\n"))
    } else {
        attacks
            .iter()
            .map(|t| t.display_name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = format!("{DETECTOR_TEMPLATE_HEAD}{list}. Text: {text}.");
    if strategy.with_confidence {
        out.push('\n');
        out.push_str(CONFIDENCE_INSTRUCTION);
    }
    Ok(RenderedPrompt {
        text: out,
        strategy: Some(strategy),
        taxonomy_hash: taxonomy.content_hash().to_string(),
    })
}

/// Render the defender rewrite prompt. The attack slot carries the
/// detector's raw response verbatim; an empty response still renders.
pub fn build_defender_prompt(
    taxonomy: &Taxonomy,
    attacked_text: &str,
    detector_response: &str,
) -> Result<RenderedPrompt, PromptError> {
    if attacked_text.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    let text = format!("{DEFENDER_TEMPLATE}\nOriginal Text: {attacked_text}\nAttack: {detector_response}");
    Ok(RenderedPrompt {
        text,
        strategy: None,
        taxonomy_hash: taxonomy.content_hash().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Taxonomy;

    #[test]
    fn base_prompt_starts_with_instruction() {
        let tax = Taxonomy::builtin();
        let p = build_detector_prompt(tax, PromptStrategy::BASE, "X").unwrap();
        assert!(p
            .text
            .starts_with("Identify any logical fallacies in the following text."));
        assert!(p.text.contains("Text: X."));
    }

    #[test]
    fn confidence_prompt_contains_output_format_token() {
        let tax = Taxonomy::builtin();
        let p = build_detector_prompt(tax, PromptStrategy::CONFIDENCE, "X").unwrap();
        assert!(p.text.contains("attack - score: #"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let tax = Taxonomy::builtin();
        for strategy in PromptStrategy::all() {
            let a = build_detector_prompt(tax, strategy, "Some document.").unwrap();
            let b = build_detector_prompt(tax, strategy, "Some document.").unwrap();
            assert_eq!(a.text, b.text);
            assert_eq!(a.taxonomy_hash, b.taxonomy_hash);
        }
    }

    #[test]
    fn every_display_name_appears_exactly_once() {
        let tax = Taxonomy::builtin();
        for strategy in PromptStrategy::all() {
            let p = build_detector_prompt(tax, strategy, "zzz").unwrap();
            for t in tax.canonical_attacks() {
                let hits = p.text.matches(&t.display_name).count();
                // "Exaggeration or Minimisation" is no substring of any other
                // name, so exact-count is a fair check.
                assert_eq!(
                    hits, 1,
                    "{} appears {hits} times under {}",
                    t.display_name, strategy
                );
            }
        }
    }

    #[test]
    fn description_prompt_is_strictly_longer() {
        let tax = Taxonomy::builtin();
        let base = build_detector_prompt(tax, PromptStrategy::BASE, "doc").unwrap();
        let d0 = build_detector_prompt(tax, PromptStrategy::DESCRIPTIONS, "doc").unwrap();
        assert!(d0.text.len() > base.text.len());
    }

    #[test]
    fn empty_document_is_rejected() {
        let tax = Taxonomy::builtin();
        assert_eq!(
            build_detector_prompt(tax, PromptStrategy::BASE, "  \n"),
            Err(PromptError::EmptyDocument)
        );
        assert_eq!(
            build_defender_prompt(tax, "", "Doubt"),
            Err(PromptError::EmptyDocument)
        );
    }

    #[test]
    fn defender_prompt_slots() {
        let tax = Taxonomy::builtin();
        let p = build_defender_prompt(tax, "T", "Appeal to Fear").unwrap();
        assert!(p.text.contains("Only respond with the rewritten text."));
        assert!(p.text.contains("\nOriginal Text: T\n"));
        assert!(p.text.ends_with("Attack: Appeal to Fear"));
        // empty attack slot still renders
        let empty = build_defender_prompt(tax, "T", "").unwrap();
        assert!(empty.text.ends_with("Attack: "));
    }

    #[test]
    fn strategy_codes_round_trip() {
        for s in PromptStrategy::all() {
            assert_eq!(PromptStrategy::from_code(s.code()), Some(s));
        }
        assert_eq!(PromptStrategy::from_code("weird"), None);
    }
}
