use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompt::PROMPT_TEMPLATE;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_CONCEPT_CHARS: usize = 120;

/// Dedup key: lowercase, whitespace collapsed, trailing punctuation removed.
pub fn normalize_key(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .to_string()
}

/// A candidate description: a word, phrase or short sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub text: String,
    #[serde(default)]
    pub source_classes: Vec<String>,
}

impl Concept {
    pub fn new(text: impl Into<String>, source_class: impl Into<String>) -> Self {
        Concept {
            text: text.into(),
            source_classes: vec![source_class.into()],
        }
    }

    pub fn key(&self) -> String {
        normalize_key(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub llm_model_id: String,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    /// Omitted in canonical output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

fn default_template() -> String {
    PROMPT_TEMPLATE.to_string()
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            llm_model_id: String::new(),
            prompt_template: default_template(),
            created_at: None,
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// The concept vocabulary, unique by normalized key, in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub dataset_tag: String,
    #[serde(default)]
    pub provenance: Provenance,
    pub concepts: Vec<Concept>,
}

/// Merges per-class descriptor lists. Concepts colliding on their
/// normalized key are merged; the first spelling wins and source classes
/// are unioned in first-seen order.
pub fn merge_vocabulary(lists: &[Vec<Concept>]) -> Result<Vec<Concept>> {
    if lists.iter().all(|l| l.is_empty()) {
        return Err(Error::EmptyVocabulary);
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<Concept> = Vec::new();
    for concept in lists.iter().flatten() {
        match index.get(&concept.key()) {
            Some(&i) => {
                for class in &concept.source_classes {
                    if !out[i].source_classes.contains(class) {
                        out[i].source_classes.push(class.clone());
                    }
                }
            }
            None => {
                index.insert(concept.key(), out.len());
                out.push(concept.clone());
            }
        }
    }
    Ok(out)
}

impl Vocabulary {
    pub fn new(dataset_tag: impl Into<String>, provenance: Provenance, concepts: Vec<Concept>) -> Result<Self> {
        let v = Vocabulary {
            schema_version: SCHEMA_VERSION,
            dataset_tag: dataset_tag.into(),
            provenance,
            concepts,
        };
        v.validate()?;
        Ok(v)
    }

    /// A vocabulary from bare concept texts, each its own source.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        let concepts = texts
            .iter()
            .map(|t| Concept::new(t.as_ref(), t.as_ref()))
            .collect::<Vec<_>>();
        Self::new("", Provenance::default(), merge_vocabulary(&[concepts])?)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.concepts {
            if c.text.trim().is_empty() || c.text.chars().count() > MAX_CONCEPT_CHARS {
                return Err(Error::InvalidParameter(format!(
                    "concept text must be 1..={MAX_CONCEPT_CHARS} characters: {:?}",
                    c.text
                )));
            }
            if !seen.insert(c.key()) {
                return Err(Error::InvalidParameter(format!("duplicate concept {:?}", c.text)));
            }
        }
        Ok(())
    }

    /// Hash of the ordered concept texts; identifies the vocabulary in
    /// explanation records.
    pub fn content_hash(&self) -> String {
        let texts: Vec<&str> = self.concepts.iter().map(|c| c.text.as_str()).collect();
        crate::fsutil::hash_json(&texts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
        if let Some(found) = raw.get("schema_version").and_then(|v| v.as_u64()) {
            if found != SCHEMA_VERSION as u64 {
                return Err(Error::SchemaVersion {
                    found: found as u32,
                    expected: SCHEMA_VERSION,
                });
            }
        }
        let v: Vocabulary = serde_json::from_value(raw)?;
        v.validate()?;
        Ok(v)
    }
}
