//! Shared data types for every pipeline stage.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid code label {0:?}: empty after normalization")]
    InvalidCode(String),
    #[error("duplicate code label {0:?}")]
    DuplicateCode(String),
    #[error("invalid document {id:?}: {reason}")]
    InvalidDocument { id: String, reason: String },
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentSource {
    Simulated,
    Imported,
}

/// The criteria a simulated document was generated from. These are the
/// ground-truth labels used by evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationCriteria {
    pub persona: String,
    pub persona_description: String,
    pub context: String,
    pub context_description: String,
    pub theme: String,
    pub sub_theme: String,
    pub writing_style: String,
    pub writing_length: String,
    pub generator_model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: DocumentSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<GenerationCriteria>,
}

impl Document {
    /// Imported documents are identified by a digest of their text so that
    /// re-importing the same corpus yields the same ids.
    pub fn imported(text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        let id = format!("doc-{}", &sha256_hex(text.as_bytes())[..16]);
        let doc = Self {
            id,
            text,
            source: DocumentSource::Imported,
            criteria: None,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn simulated(
        sequence: usize,
        text: impl Into<String>,
        criteria: GenerationCriteria,
    ) -> Result<Self, DomainError> {
        let doc = Self {
            id: format!("sim-{sequence:06}"),
            text: text.into(),
            source: DocumentSource::Simulated,
            criteria: Some(criteria),
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |reason: &str| DomainError::InvalidDocument {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid("empty text"));
        }
        match (self.source, &self.criteria) {
            (DocumentSource::Simulated, None) => Err(invalid("simulated document without criteria")),
            (DocumentSource::Imported, Some(_)) => Err(invalid("imported document with criteria")),
            _ => Ok(()),
        }
    }
}

/// Checks id uniqueness and per-document validity across a corpus.
pub fn validate_corpus(docs: &[Document]) -> Result<(), DomainError> {
    let mut seen = HashSet::new();
    for doc in docs {
        doc.validate()?;
        if !seen.insert(doc.id.as_str()) {
            return Err(DomainError::InvalidDocument {
                id: doc.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub id: String,
    pub doc_id: String,
    pub ordinal: u32,
    pub text: String,
}

impl SummaryPoint {
    pub fn new(doc_id: &str, ordinal: u32, text: impl Into<String>) -> Self {
        Self {
            id: format!("{doc_id}#{ordinal}"),
            doc_id: doc_id.to_string(),
            ordinal,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub model_id: String,
    pub dims: usize,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(model_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            model_id: model_id.into(),
            dims: values.len(),
            values,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeOrigin {
    Starter,
    Induced(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub label: String,
    pub definition: String,
    pub origin: CodeOrigin,
    pub creation_index: u32,
}

/// Lowercases, collapses whitespace runs and strips punctuation from both
/// ends. Never inserts spaces.
pub fn normalize_code_label(raw: &str) -> Result<String, DomainError> {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed = collapsed
        .trim_matches(|c: char| c.is_whitespace() || is_edge_punctuation(c))
        .to_lowercase();
    if trimmed.is_empty() {
        return Err(DomainError::InvalidCode(raw.to_string()));
    }
    Ok(trimmed)
}

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreationLogEntry {
    pub cluster_ordinal: u32,
    pub codes_created: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub entries: Vec<CodeEntry>,
    pub creation_log: Vec<CreationLogEntry>,
}

impl Codebook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.iter().any(|e| e.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn starter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.origin == CodeOrigin::Starter)
            .count()
    }

    /// Normalizes `raw_label` and appends a new entry. A label that already
    /// exists is rejected and the codebook is left unchanged.
    pub fn insert(
        &mut self,
        raw_label: &str,
        definition: impl Into<String>,
        origin: CodeOrigin,
    ) -> Result<&CodeEntry, DomainError> {
        let label = normalize_code_label(raw_label)?;
        if self.contains(&label) {
            return Err(DomainError::DuplicateCode(label));
        }
        let creation_index = self
            .entries
            .last()
            .map(|e| e.creation_index + 1)
            .unwrap_or(0);
        self.entries.push(CodeEntry {
            label,
            definition: definition.into(),
            origin,
            creation_index,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn log_cluster(&mut self, cluster_ordinal: u32, codes_created: u32) {
        self.creation_log.push(CreationLogEntry {
            cluster_ordinal,
            codes_created,
        });
    }

    /// Cumulative codebook size after each logged cluster.
    pub fn cumulative_sizes(&self) -> Vec<usize> {
        let mut total = self.starter_count();
        self.creation_log
            .iter()
            .map(|e| {
                total += e.codes_created as usize;
                total
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub member_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub name: String,
    pub concept: String,
    pub codes: Vec<String>,
    pub relationship: String,
}

/// Effective run configuration. Defaults: five nearest codes, twenty
/// starter codes, 90% retained variance, five reduced dimensions and
/// roughly ten summary points per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_type: String,
    pub data_collection_context: String,
    pub research_question: String,
    pub knn_k: usize,
    pub starter_code_count: usize,
    pub pca_variance_target: f64,
    pub reduced_dims: usize,
    pub target_cluster_size: usize,
    pub theme_cluster_size: usize,
    pub chat_model_id: String,
    pub embed_model_id: String,
    pub temperature: f64,
    pub seed: u64,
    pub match_threshold: f64,
    pub endpoint_url: String,
    pub redundancy_example: String,
}

pub const DEFAULT_REDUNDANCY_EXAMPLE: &str = "The codes \"team communication\" and \"communicating within the team\" are redundant. Both describe how members of a team exchange information with each other, so only one of them belongs in the codebook.";

pub const DEFAULT_ENDPOINT: &str = "http://localhost:11434/v1";

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_type: String::new(),
            data_collection_context: String::new(),
            research_question: String::new(),
            knn_k: 5,
            starter_code_count: 20,
            pca_variance_target: 0.90,
            reduced_dims: 5,
            target_cluster_size: 10,
            theme_cluster_size: 12,
            chat_model_id: String::new(),
            embed_model_id: String::new(),
            temperature: 0.0,
            seed: 0,
            match_threshold: 0.75,
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            redundancy_example: DEFAULT_REDUNDANCY_EXAMPLE.to_string(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<(), DomainError> {
            Err(DomainError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        }
        if !(self.pca_variance_target > 0.0 && self.pca_variance_target <= 1.0) {
            return bad("pca_variance_target", format!("{} is not in (0, 1]", self.pca_variance_target));
        }
        if self.knn_k < 1 {
            return bad("knn_k", "must be at least 1");
        }
        if self.reduced_dims < 2 {
            return bad("reduced_dims", "must be at least 2");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature", "must be non-negative");
        }
        if self.starter_code_count < 1 {
            return bad("starter_code_count", "must be at least 1");
        }
        if self.target_cluster_size < 1 {
            return bad("target_cluster_size", "must be at least 1");
        }
        if self.theme_cluster_size < 1 {
            return bad("theme_cluster_size", "must be at least 1");
        }
        if !(-1.0..=1.0).contains(&self.match_threshold) {
            return bad("match_threshold", "must be a cosine similarity in [-1, 1]");
        }
        for (field, value) in [
            ("data_type", &self.data_type),
            ("data_collection_context", &self.data_collection_context),
            ("chat_model_id", &self.chat_model_id),
            ("embed_model_id", &self.embed_model_id),
        ] {
            if value.trim().is_empty() {
                return bad(field, "must not be empty");
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
