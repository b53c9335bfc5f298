use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, RunConfig};
use crate::simulator::StudySpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(#[from] DomainError),
    #[error("invalid config: {0}")]
    Other(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Existing corpus (JSON Lines of documents) used instead of simulation.
    pub corpus: Option<PathBuf>,
    /// Ground-truth sub-themes: a criteria JSON file, a JSON array of
    /// strings, or one sub-theme per line.
    pub truth: Option<PathBuf>,
}

/// The whole configuration file: run settings at the top level, plus
/// optional `[study]` and `[input]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySpec>,
    #[serde(default)]
    pub input: InputConfig,
}

impl PipelineConfig {
    /// Parses TOML text. Relative input paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path, origin: &str) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: origin.to_string(),
            message,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let study = table
            .remove("study")
            .map(|v| v.try_into::<StudySpec>())
            .transpose()
            .map_err(|e| parse_err(format!("[study]: {e}")))?;
        let input = table
            .remove("input")
            .map(|v| v.try_into::<InputConfig>())
            .transpose()
            .map_err(|e| parse_err(format!("[input]: {e}")))?
            .unwrap_or_default();
        let run: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;

        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let mut cfg = PipelineConfig {
            run,
            study,
            input: InputConfig {
                corpus: input.corpus.map(resolve),
                truth: input.truth.map(resolve),
            },
        };
        if let Some(study) = cfg.study.as_mut() {
            if study.data_type.is_empty() {
                study.data_type = cfg.run.data_type.clone();
            }
            if study.data_collection_context.is_empty() {
                study.data_collection_context = cfg.run.data_collection_context.clone();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run.validate()?;
        if let Some(study) = &self.study {
            study.validate().map_err(|e| ConfigError::Other(e.to_string()))?;
        }
        if self.study.is_none() && self.input.corpus.is_none() {
            return Err(ConfigError::Other(
                "either a [study] table or input.corpus is required".into(),
            ));
        }
        Ok(())
    }

    /// The effective configuration, defaults filled in, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Loads and validates a configuration file, returning the effective run
/// settings.
pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigError> {
    Ok(PipelineConfig::load(path)?.run)
}
