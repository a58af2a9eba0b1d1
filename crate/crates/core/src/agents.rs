//! Detector and Defender agents: prompt rendering, endpoint calls, and
//! response parsing into structured detections and rewrites.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::prompt::{build_defender_prompt, build_detector_prompt, PromptError, PromptStrategy};
use crate::taxonomy::{canonicalize, Taxonomy};

/// One attack type a detector claimed to find.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectedAttack {
    pub attack_id: String,
    pub display_name: String,
    /// Present exactly when the prompt asked for scores.
    pub confidence: Option<u8>,
}

/// Parsed detector output for one document under one run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    pub document_id: String,
    pub model_id: String,
    pub strategy: PromptStrategy,
    pub temperature: f64,
    /// Each attack type at most once, sorted by display name.
    pub predicted: Vec<DetectedAttack>,
    /// Segments that failed normalization, plus raw tokens kept for audit
    /// when a score needed clamping.
    pub unparsed_fragments: Vec<String>,
    pub raw_text: String,
}

/// Defender rewrite of one attacked document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseResult {
    pub document_id: String,
    pub model_id: String,
    pub inoculated_text: String,
    pub source_detection: DetectionResult,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("defender for document {document_id:?} on {model_id:?} returned only whitespace")]
    EmptyRewrite {
        document_id: String,
        model_id: String,
    },
}

fn confidence_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?P<name>.+?)\s*[-–—:]\s*score\s*:\s*(?P<score>-?\d+(?:\.\d+)?)\s*\.?\s*$")
            .expect("confidence pattern compiles")
    })
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:\(?\d{1,3}[.)]|[-*•])\s+").expect("list marker pattern compiles")
    })
}

fn segments(raw_text: &str) -> Vec<String> {
    raw_text
        .split(['\n', ';'])
        .map(|s| list_marker().replace(s, "").trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn is_negative_response(segment: &str) -> bool {
    let canon = canonicalize(segment);
    canon == "none" || canon.starts_with("no fallac") || canon.starts_with("no logical fallac")
}

/// Parse raw detector output into a deduplicated set of attack types plus
/// the segments that did not parse.
///
/// Scored lines (`name - score: <int>`) are required under confidence
/// strategies; bare names there carry no usable score and land in the
/// fragments instead. Non-confidence strategies match bare names only.
/// Scores outside 1..=10 (or non-integer) are rounded and clamped, with the
/// original segment kept as a fragment for audit. A whole-response "none" or
/// "no fallacies" yields the empty set.
pub fn parse_detection(
    taxonomy: &Taxonomy,
    raw_text: &str,
    strategy: PromptStrategy,
) -> (Vec<DetectedAttack>, Vec<String>) {
    let segs = segments(raw_text);
    if segs.is_empty() {
        return (Vec::new(), Vec::new());
    }
    if segs.len() == 1 && is_negative_response(&segs[0]) {
        return (Vec::new(), Vec::new());
    }

    let mut found: BTreeMap<String, (String, Option<u8>)> = BTreeMap::new();
    let mut fragments = Vec::new();
    for seg in segs {
        if strategy.with_confidence {
            let Some(caps) = confidence_line().captures(&seg) else {
                fragments.push(seg);
                continue;
            };
            let Some(attack) = taxonomy.normalize(&caps["name"]) else {
                fragments.push(seg);
                continue;
            };
            let token = &caps["score"];
            let value: f64 = token.parse().expect("regex guarantees a number");
            let clamped = (value.round() as i64).clamp(1, 10) as u8;
            let clean = matches!(token.parse::<i64>(), Ok(v) if (1..=10).contains(&v));
            if !clean {
                fragments.push(seg.clone());
            }
            merge(&mut found, attack.display_name.clone(), attack.id.clone(), Some(clamped));
        } else {
            match taxonomy.normalize(&seg) {
                Some(attack) => {
                    merge(&mut found, attack.display_name.clone(), attack.id.clone(), None)
                }
                None => fragments.push(seg),
            }
        }
    }

    let predicted = found
        .into_iter()
        .map(|(display_name, (attack_id, confidence))| DetectedAttack {
            attack_id,
            display_name,
            confidence,
        })
        .collect();
    (predicted, fragments)
}

fn merge(
    found: &mut BTreeMap<String, (String, Option<u8>)>,
    display_name: String,
    attack_id: String,
    confidence: Option<u8>,
) {
    found
        .entry(display_name)
        .and_modify(|(_, existing)| *existing = (*existing).max(confidence))
        .or_insert((attack_id, confidence));
}

/// Canonical writer matching what `parse_detection` reads: one line per
/// attack, scored when a confidence is present.
pub fn format_detection(predicted: &[DetectedAttack]) -> String {
    if predicted.is_empty() {
        return "none".to_string();
    }
    predicted
        .iter()
        .map(|a| match a.confidence {
            Some(score) => format!("{} - score: {score}", a.display_name),
            None => a.display_name.clone(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Run the Detector: render the prompt for `strategy`, call the model, and
/// parse the response.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    gateway: &Gateway,
    taxonomy: &Taxonomy,
    document_id: &str,
    text: &str,
    model_id: &str,
    strategy: PromptStrategy,
    temperature: f64,
    max_tokens: u32,
) -> Result<DetectionResult, AgentError> {
    let prompt = build_detector_prompt(taxonomy, strategy, text)?;
    let request = CompletionRequest::new(
        model_id,
        prompt,
        temperature,
        max_tokens,
        format!("detect:{document_id}:{model_id}:{}:{temperature}", strategy.code()),
    )?;
    let completion = gateway.complete(&request)?;
    let (predicted, unparsed_fragments) =
        parse_detection(taxonomy, &completion.raw_text, strategy);
    Ok(DetectionResult {
        document_id: document_id.to_string(),
        model_id: model_id.to_string(),
        strategy,
        temperature,
        predicted,
        unparsed_fragments,
        raw_text: completion.raw_text,
    })
}

/// Run the Defender: rewrite `attacked_text` with the detector's raw
/// response in the Attack slot. The model output is kept verbatim.
pub fn defend(
    gateway: &Gateway,
    taxonomy: &Taxonomy,
    document_id: &str,
    attacked_text: &str,
    detection: &DetectionResult,
    model_id: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<DefenseResult, AgentError> {
    let prompt = build_defender_prompt(taxonomy, attacked_text, &detection.raw_text)?;
    let request = CompletionRequest::new(
        model_id,
        prompt,
        temperature,
        max_tokens,
        format!("defend:{document_id}:{model_id}:{temperature}"),
    )?;
    let completion = gateway.complete(&request)?;
    if completion.raw_text.trim().is_empty() {
        return Err(AgentError::EmptyRewrite {
            document_id: document_id.to_string(),
            model_id: model_id.to_string(),
        });
    }
    Ok(DefenseResult {
        document_id: document_id.to_string(),
        model_id: model_id.to_string(),
        inoculated_text: completion.raw_text,
        source_detection: detection.clone(),
    })
}
