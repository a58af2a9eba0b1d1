//! Canonical registry of the 23 persuasion-attack types.
//!
//! The registry ships as `data/taxonomy.toml` and is embedded at compile
//! time. Detector prompts are rendered from it, so its order (alphabetical
//! by display name) and content are part of the artifact's contract: the
//! content hash is recorded on every rendered prompt.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Embedded taxonomy source. `Taxonomy::builtin()` parses this once.
pub const TAXONOMY_TOML: &str = include_str!("../data/taxonomy.toml");

/// Maximum normalized Levenshtein distance accepted by [`Taxonomy::normalize`].
pub const FUZZ_THRESHOLD: f64 = 0.2;

/// One persuasion-attack technique.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackType {
    /// Stable snake_case identifier, used as the canonical key everywhere.
    pub id: String,
    /// Canonical label, e.g. "Appeal to Fear".
    pub display_name: String,
    /// One-paragraph explanation used by the description-enhanced prompt.
    pub description: String,
    /// Accepted surface forms beyond the display name.
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy file is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("expected 23 attack types, found {0}")]
    WrongCount(usize),
    #[error("duplicate attack id {0:?}")]
    DuplicateId(String),
    #[error("duplicate display name {0:?}")]
    DuplicateDisplayName(String),
    #[error("alias {alias:?} maps to both {first:?} and {second:?}")]
    AmbiguousAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("attack type {0:?} has an empty description")]
    EmptyDescription(String),
}

#[derive(Deserialize)]
struct TaxonomyFile {
    attack: Vec<AttackType>,
}

/// Immutable registry of attack types. Safe to share across threads.
#[derive(Debug)]
pub struct Taxonomy {
    types: Vec<AttackType>,
    /// canonicalized surface form -> index into `types`
    surface: HashMap<String, usize>,
    content_hash: String,
}

impl Taxonomy {
    /// Parse a taxonomy from TOML text and validate its invariants.
    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        let parsed: TaxonomyFile = toml::from_str(text)?;
        let mut types = parsed.attack;
        if types.len() != 23 {
            return Err(TaxonomyError::WrongCount(types.len()));
        }
        // Prompt text depends on this order, so it is fixed here rather than
        // left to the file.
        types.sort_by(|a, b| a.display_name.cmp(&b.display_name));

        let mut surface: HashMap<String, usize> = HashMap::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        for (idx, t) in types.iter().enumerate() {
            if t.description.trim().is_empty() {
                return Err(TaxonomyError::EmptyDescription(t.display_name.clone()));
            }
            if ids.insert(t.id.clone(), idx).is_some() {
                return Err(TaxonomyError::DuplicateId(t.id.clone()));
            }
            for form in std::iter::once(&t.display_name).chain(t.aliases.iter()) {
                let key = canonicalize(form);
                if let Some(&prev) = surface.get(&key) {
                    if prev != idx {
                        return Err(TaxonomyError::AmbiguousAlias {
                            alias: form.clone(),
                            first: types[prev].display_name.clone(),
                            second: t.display_name.clone(),
                        });
                    }
                    if form == &t.display_name {
                        return Err(TaxonomyError::DuplicateDisplayName(form.clone()));
                    }
                } else {
                    surface.insert(key, idx);
                }
            }
        }

        let content_hash = hex_digest(text.as_bytes());
        Ok(Self {
            types,
            surface,
            content_hash,
        })
    }

    /// The embedded registry, parsed once per process.
    pub fn builtin() -> &'static Taxonomy {
        static BUILTIN: OnceLock<Taxonomy> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Taxonomy::from_toml(TAXONOMY_TOML).expect("embedded taxonomy must be valid")
        })
    }

    /// All 23 types in canonical order (alphabetical by display name).
    pub fn canonical_attacks(&self) -> &[AttackType] {
        &self.types
    }

    /// Look up a type by its stable id.
    pub fn by_id(&self, id: &str) -> Option<&AttackType> {
        self.types.iter().find(|t| t.id == id)
    }

    /// The stored description for a canonical type.
    pub fn description(&self, id: &str) -> Option<&str> {
        self.by_id(id).map(|t| t.description.as_str())
    }

    /// Hex SHA-256 of the taxonomy file content.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    /// Robust name normalization: case-, punctuation- and
    /// whitespace-insensitive match against display names and aliases,
    /// falling back to fuzzy matching bounded by [`FUZZ_THRESHOLD`].
    ///
    /// Returns `None` rather than guessing: a raw string whose distance to
    /// every candidate exceeds the threshold, or that ties between two
    /// different types, is a no-match.
    pub fn normalize(&self, raw: &str) -> Option<&AttackType> {
        let key = canonicalize(raw);
        if key.is_empty() {
            return None;
        }
        if let Some(&idx) = self.surface.get(&key) {
            return Some(&self.types[idx]);
        }
        let mut best: Option<(f64, usize)> = None;
        let mut tie = false;
        for (form, &idx) in &self.surface {
            let d = normalized_levenshtein_distance(&key, form);
            match &mut best {
                None => best = Some((d, idx)),
                Some((bd, bidx)) => {
                    if d < *bd {
                        *bd = d;
                        *bidx = idx;
                        tie = false;
                    } else if d == *bd && *bidx != idx {
                        tie = true;
                    }
                }
            }
        }
        match best {
            Some((d, idx)) if d <= FUZZ_THRESHOLD && !tie => Some(&self.types[idx]),
            _ => None,
        }
    }
}

/// Lowercase, strip punctuation, collapse whitespace.
pub fn canonicalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Levenshtein distance divided by the longer length; 0.0 for two empties.
pub fn normalized_levenshtein_distance(a: &str, b: &str) -> f64 {
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 0.0;
    }
    strsim::levenshtein(a, b) as f64 / len as f64
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
