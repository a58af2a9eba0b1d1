//! Line-delimited JSON article corpus: one record per line with the clean
//! text, the attacked variant, and the gold attack types.

use crate::taxonomy::Taxonomy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    FileNotFound(String),
    #[error("could not read dataset {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown attack type {name:?}")]
    UnknownAttackType { line: usize, name: String },
}

/// One article with its manipulated variant. `attack_types` holds
/// canonical ids, normalized at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub original: String,
    pub attack: String,
    pub attack_types: Vec<String>,
}

#[derive(Deserialize)]
struct RawArticle {
    id: String,
    original: String,
    attack: String,
    attack_types: Vec<String>,
}

pub fn load_dataset(path: &Path) -> Result<Vec<ArticleRecord>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::FileNotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<ArticleRecord>, DatasetError> {
    let taxonomy = Taxonomy::builtin();
    let mut records = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle =
            serde_json::from_str(line).map_err(|e| DatasetError::MalformedRecord {
                line: line_number,
                reason: e.to_string(),
            })?;
        if raw.id.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                line: line_number,
                reason: "empty id".into(),
            });
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(DatasetError::MalformedRecord {
                line: line_number,
                reason: format!("duplicate id {:?}", raw.id),
            });
        }
        if raw.attack.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                line: line_number,
                reason: "empty attack text".into(),
            });
        }
        if raw.attack_types.is_empty() {
            return Err(DatasetError::MalformedRecord {
                line: line_number,
                reason: "empty attack_types".into(),
            });
        }
        let mut ids = BTreeSet::new();
        for name in &raw.attack_types {
            let attack = taxonomy
                .normalize(name)
                .ok_or_else(|| DatasetError::UnknownAttackType {
                    line: line_number,
                    name: name.clone(),
                })?;
            ids.insert(attack.id.clone());
        }
        records.push(ArticleRecord {
            id: raw.id,
            original: raw.original,
            attack: raw.attack,
            attack_types: ids.into_iter().collect(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, types: &[&str]) -> String {
        serde_json::json!({
            "id": id,
            "original": format!("original text of {id}"),
            "attack": format!("attacked text of {id}"),
            "attack_types": types,
        })
        .to_string()
    }

    #[test]
    fn valid_records_load_in_order() {
        let text = [
            line("a1", &["Appeal to Fear"]),
            line("a2", &["Doubt", "Red Herring"]),
            line("a3", &["Slogans"]),
        ]
        .join("\n");
        let records = parse_dataset(&text).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].id, "a1");
        assert_eq!(records[0].attack_types, vec!["appeal_to_fear"]);
        assert_eq!(records[1].attack_types, vec!["doubt", "red_herring"]);
    }

    #[test]
    fn names_normalize_to_canonical_ids() {
        let text = line("a1", &["appeal to fear", "STRAWMAN ARGUMENT"]);
        let records = parse_dataset(&text).unwrap();
        assert_eq!(records[0].attack_types, vec!["appeal_to_fear", "straw_man"]);
    }

    #[test]
    fn missing_field_reports_its_line() {
        let good = line("a1", &["Doubt"]);
        let bad = r#"{"id": "a2", "original": "x", "attack_types": ["Doubt"]}"#;
        let text = format!("{good}\n{bad}");
        match parse_dataset(&text) {
            Err(DatasetError::MalformedRecord { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("attack"), "reason: {reason}");
            }
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn unknown_attack_type_reports_line_and_name() {
        let text = [line("a1", &["Doubt"]), line("a2", &["Totally Made Up"])].join("\n");
        match parse_dataset(&text) {
            Err(DatasetError::UnknownAttackType { line, name }) => {
                assert_eq!(line, 2);
                assert_eq!(name, "Totally Made Up");
            }
            other => panic!("expected UnknownAttackType, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_empty_fields_are_malformed() {
        let text = [line("a1", &["Doubt"]), line("a1", &["Doubt"])].join("\n");
        assert!(matches!(
            parse_dataset(&text),
            Err(DatasetError::MalformedRecord { line: 2, .. })
        ));

        let empty_attack = serde_json::json!({
            "id": "a9", "original": "x", "attack": "  ", "attack_types": ["Doubt"]
        })
        .to_string();
        assert!(matches!(
            parse_dataset(&empty_attack),
            Err(DatasetError::MalformedRecord { line: 1, .. })
        ));

        let no_types = serde_json::json!({
            "id": "a9", "original": "x", "attack": "y", "attack_types": []
        })
        .to_string();
        assert!(matches!(
            parse_dataset(&no_types),
            Err(DatasetError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let missing = Path::new("/nonexistent/corpus.jsonl");
        assert!(matches!(
            load_dataset(missing),
            Err(DatasetError::FileNotFound(_))
        ));
    }

    #[test]
    fn blank_lines_are_skipped() {
        let text = format!("\n{}\n\n{}\n", line("a1", &["Doubt"]), line("a2", &["Doubt"]));
        assert_eq!(parse_dataset(&text).unwrap().len(), 2);
    }
}
