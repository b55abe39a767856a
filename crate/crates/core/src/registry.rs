//! Template registry: loading, validation, content versioning and sub-template segmentation.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{normalize, tokenize};

/// Literal marker for a fill-in slot in template text.
pub const GAP_MARKER: &str = "{{gap}}";

pub const DEFAULT_MIN_SUBTEMPLATE_TOKENS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTemplate {
    pub template_id: String,
    pub index: usize,
    /// Gap-free normalized tokens joined by single spaces.
    pub text: String,
}

/// Immutable snapshot of a template list and its derived sub-templates.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    version: String,
    templates: Vec<Template>,
    subtemplates: Vec<SubTemplate>,
    created_at: DateTime<Utc>,
    min_subtemplate_tokens: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<DateTime<Utc>>,
    templates: Vec<Template>,
}

/// Split `template` at gap markers and sentence boundaries, dropping
/// fragments shorter than `min_tokens` tokens.
pub fn segment(template: &Template, min_tokens: usize) -> Vec<SubTemplate> {
    let norm = normalize(&template.text);
    let mut out = Vec::new();
    for part in norm.split(GAP_MARKER) {
        for fragment in split_sentences(part) {
            let tokens = tokenize(fragment);
            if tokens.is_empty() || tokens.len() < min_tokens {
                continue;
            }
            out.push(SubTemplate {
                template_id: template.id.clone(),
                index: out.len(),
                text: tokens.token_texts().join(" "),
            });
        }
    }
    out
}

/// Sentence boundary: `.`, `!` or `?` followed by a space.
fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut pieces = Vec::new();
    let mut start = 0;
    for i in 0..bytes.len().saturating_sub(1) {
        if matches!(bytes[i], b'.' | b'!' | b'?') && bytes[i + 1] == b' ' {
            pieces.push(&text[start..i]);
            start = i + 1;
        }
    }
    pieces.push(&text[start..]);
    pieces
}

fn content_version(templates: &[Template]) -> Result<String> {
    let canonical = serde_json::to_vec(templates)?;
    let digest = Sha256::digest(&canonical);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Registry {
    pub fn new(templates: Vec<Template>, min_subtemplate_tokens: usize) -> Result<Self> {
        Self::build(templates, min_subtemplate_tokens, Utc::now())
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), DEFAULT_MIN_SUBTEMPLATE_TOKENS).expect("empty registry is valid")
    }

    fn build(
        templates: Vec<Template>,
        min_subtemplate_tokens: usize,
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        if min_subtemplate_tokens == 0 {
            return Err(Error::InvalidParams(
                "min_subtemplate_tokens must be positive".into(),
            ));
        }
        let mut ids = HashSet::new();
        let mut texts = HashSet::new();
        for t in &templates {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::InvalidTemplate {
                    id: t.id.clone(),
                    message: "duplicate id".into(),
                });
            }
            let norm = normalize(&t.text);
            if norm.is_empty() {
                return Err(Error::InvalidTemplate {
                    id: t.id.clone(),
                    message: "empty text".into(),
                });
            }
            if !texts.insert(norm) {
                return Err(Error::InvalidTemplate {
                    id: t.id.clone(),
                    message: "duplicate template text".into(),
                });
            }
        }

        let mut subtemplates = Vec::new();
        for t in &templates {
            let segs = segment(t, min_subtemplate_tokens);
            if segs.is_empty() {
                log::warn!(
                    "template {:?} has no segment of at least {} tokens; it will never match",
                    t.id,
                    min_subtemplate_tokens
                );
            }
            subtemplates.extend(segs);
        }

        Ok(Registry {
            version: content_version(&templates)?,
            templates,
            subtemplates,
            created_at,
            min_subtemplate_tokens,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn subtemplates(&self) -> &[SubTemplate] {
        &self.subtemplates
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn min_subtemplate_tokens(&self) -> usize {
        self.min_subtemplate_tokens
    }

    /// A new snapshot with `template` appended.
    pub fn with_template(&self, template: Template) -> Result<Self> {
        let mut templates = self.templates.clone();
        templates.push(template);
        Self::new(templates, self.min_subtemplate_tokens)
    }

    pub fn from_json(json: &str, min_subtemplate_tokens: usize) -> serde_json::Result<Result<Self>> {
        let file: RegistryFile = serde_json::from_str(json)?;
        if let Some(v) = &file.version {
            log::debug!("registry file declares version {v}; recomputing from content");
        }
        let created_at = file.created_at.unwrap_or_else(Utc::now);
        Ok(Self::build(file.templates, min_subtemplate_tokens, created_at))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RegistryFile {
            version: Some(self.version.clone()),
            created_at: Some(self.created_at),
            templates: self.templates.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_registry(path: &Path, min_subtemplate_tokens: usize) -> Result<Registry> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Registry::from_json(&raw, min_subtemplate_tokens).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?
}
