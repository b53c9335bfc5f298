use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub response: String,
}

/// Recorded request-hash to response pairs. Stored on disk as JSON Lines,
/// sorted by hash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: BTreeMap<String, String>,
}

impl Transcript {
    pub fn get(&self, request_hash: &str) -> Option<&str> {
        self.entries.get(request_hash).map(String::as_str)
    }

    pub fn insert(&mut self, request_hash: String, response: String) {
        self.entries.insert(request_hash, response);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: Transcript) {
        self.entries.extend(other.entries);
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path)?;
        let mut entries = BTreeMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Protocol(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            entries.insert(entry.request_hash, entry.response);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        for (request_hash, response) in &self.entries {
            let entry = TranscriptEntry {
                request_hash: request_hash.clone(),
                response: response.clone(),
            };
            let line = serde_json::to_string(&entry).map_err(|e| GatewayError::Protocol(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}
