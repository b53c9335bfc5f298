//! The single seam for generative-model and embedding-model calls.
//!
//! A [`Gateway`] wraps a [`ModelBackend`] (HTTP, offline heuristic, or a
//! test closure) and a [`Transcript`]. In replay mode the backend is never
//! consulted: every response comes from the transcript, keyed by request
//! hash, so offline runs are byte-for-byte reproducible.

mod http;
mod offline;
mod transcript;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{sha256_hex, EmbeddingVector};

pub use http::{HttpBackend, RetryPolicy};
pub use offline::{hashing_embedding, OfflineModel, ScriptedBackend, OFFLINE_EMBED_DIMS};
pub use transcript::{Transcript, TranscriptEntry};

/// Overrides the configured endpoint URL when set.
pub const ENDPOINT_ENV: &str = "GATOS_ENDPOINT";
/// Optional bearer token sent to the endpoint.
pub const API_KEY_ENV: &str = "GATOS_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no transcript entry for request {0}")]
    MissingTranscript(String),
    #[error("gateway protocol error: {0}")]
    Protocol(String),
    #[error("embedding batch is empty")]
    EmptyBatch,
    #[error("embedding input {0} is empty")]
    EmptyText(usize),
    #[error("transcript io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub request_hash: String,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        let model_id = model_id.into();
        let prompt = prompt.into();
        let request_hash = chat_hash(&model_id, &prompt, temperature);
        Self {
            model_id,
            prompt,
            temperature,
            request_hash,
        }
    }
}

pub fn chat_hash(model_id: &str, prompt: &str, temperature: f64) -> String {
    let key = format!("chat\0{model_id}\0{:016x}\0{prompt}", temperature.to_bits());
    sha256_hex(key.as_bytes())
}

pub fn embed_hash(model_id: &str, text: &str) -> String {
    sha256_hex(format!("embed\0{model_id}\0{text}").as_bytes())
}

/// Something that can answer chat and embedding requests.
pub trait ModelBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError>;
    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    /// Call the backend; nothing is recorded.
    Live,
    /// Call the backend and record every response into the transcript.
    Record,
    /// Answer only from the transcript.
    Replay,
}

/// One rendered prompt and its response, kept for the audit trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub request_hash: String,
    pub model_id: String,
    pub prompt: String,
    pub response: String,
}

pub struct Gateway {
    mode: GatewayMode,
    backend: Option<Arc<dyn ModelBackend>>,
    transcript: Mutex<Transcript>,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("has_backend", &self.backend.is_some())
            .finish()
    }
}

const EMBED_CHUNK: usize = 64;

impl Gateway {
    pub fn live(backend: Arc<dyn ModelBackend>) -> Self {
        Self::with_parts(GatewayMode::Live, Some(backend), Transcript::default())
    }

    pub fn recording(backend: Arc<dyn ModelBackend>, transcript: Transcript) -> Self {
        Self::with_parts(GatewayMode::Record, Some(backend), transcript)
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::with_parts(GatewayMode::Replay, None, transcript)
    }

    /// Replay gateway that still holds a backend. The backend is never
    /// called; this exists so tests can prove that.
    pub fn replay_with_backend(transcript: Transcript, backend: Arc<dyn ModelBackend>) -> Self {
        Self::with_parts(GatewayMode::Replay, Some(backend), transcript)
    }

    fn with_parts(mode: GatewayMode, backend: Option<Arc<dyn ModelBackend>>, transcript: Transcript) -> Self {
        Self {
            mode,
            backend,
            transcript: Mutex::new(transcript),
            embed_cache: Mutex::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    fn backend(&self) -> Result<&Arc<dyn ModelBackend>, GatewayError> {
        self.backend
            .as_ref()
            .ok_or_else(|| GatewayError::Protocol("no model backend configured".into()))
    }

    /// Returns the completion text exactly as the model produced it.
    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let response = match self.mode {
            GatewayMode::Replay => self
                .transcript
                .lock()
                .expect("transcript lock")
                .get(&req.request_hash)
                .map(str::to_string)
                .ok_or_else(|| GatewayError::MissingTranscript(req.request_hash.clone()))?,
            GatewayMode::Live | GatewayMode::Record => {
                let text = self.backend()?.chat(req)?;
                if self.mode == GatewayMode::Record {
                    self.transcript
                        .lock()
                        .expect("transcript lock")
                        .insert(req.request_hash.clone(), text.clone());
                }
                text
            }
        };
        self.audit.lock().expect("audit lock").push(AuditEntry {
            request_hash: req.request_hash.clone(),
            model_id: req.model_id.clone(),
            prompt: req.prompt.clone(),
            response: response.clone(),
        });
        Ok(response)
    }

    /// Embeds `texts` in order. Vectors are returned unnormalized.
    pub fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(GatewayError::EmptyText(i));
        }
        let keys: Vec<String> = texts.iter().map(|t| embed_hash(model_id, t)).collect();

        let mut pending: Vec<(String, String)> = Vec::new();
        {
            let cache = self.embed_cache.lock().expect("cache lock");
            for (key, text) in keys.iter().zip(texts) {
                if !cache.contains_key(key) && !pending.iter().any(|(k, _)| k == key) {
                    pending.push((key.clone(), text.clone()));
                }
            }
        }

        let fetched = match self.mode {
            GatewayMode::Replay => self.embed_from_transcript(&pending)?,
            GatewayMode::Live | GatewayMode::Record => self.embed_from_backend(model_id, &pending)?,
        };

        let mut cache = self.embed_cache.lock().expect("cache lock");
        cache.extend(fetched);
        let vectors: Vec<EmbeddingVector> = keys
            .iter()
            .map(|k| EmbeddingVector::new(model_id, cache[k].clone()))
            .collect();
        let dims = vectors[0].dims;
        if dims == 0 || vectors.iter().any(|v| v.dims != dims) {
            return Err(GatewayError::Protocol(format!(
                "embedding dims differ within batch (first has {dims})"
            )));
        }
        Ok(vectors)
    }

    fn embed_from_transcript(&self, pending: &[(String, String)]) -> Result<Vec<(String, Vec<f64>)>, GatewayError> {
        let transcript = self.transcript.lock().expect("transcript lock");
        pending
            .iter()
            .map(|(key, _)| {
                let raw = transcript
                    .get(key)
                    .ok_or_else(|| GatewayError::MissingTranscript(key.clone()))?;
                let values: Vec<f64> = serde_json::from_str(raw)
                    .map_err(|e| GatewayError::Protocol(format!("bad embedding in transcript: {e}")))?;
                Ok((key.clone(), values))
            })
            .collect()
    }

    fn embed_from_backend(
        &self,
        model_id: &str,
        pending: &[(String, String)],
    ) -> Result<Vec<(String, Vec<f64>)>, GatewayError> {
        let backend = self.backend()?;
        let mut out = Vec::with_capacity(pending.len());
        for chunk in pending.chunks(EMBED_CHUNK) {
            let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
            let vectors = backend.embed(model_id, &texts)?;
            if vectors.len() != texts.len() {
                return Err(GatewayError::Protocol(format!(
                    "asked for {} embeddings, got {}",
                    texts.len(),
                    vectors.len()
                )));
            }
            for ((key, _), values) in chunk.iter().zip(vectors) {
                if self.mode == GatewayMode::Record {
                    let encoded = serde_json::to_string(&values)
                        .map_err(|e| GatewayError::Protocol(e.to_string()))?;
                    self.transcript
                        .lock()
                        .expect("transcript lock")
                        .insert(key.clone(), encoded);
                }
                out.push((key.clone(), values));
            }
        }
        Ok(out)
    }

    /// Removes and returns the audit entries collected so far, sorted by
    /// request hash so the order does not depend on worker scheduling.
    pub fn drain_audit(&self) -> Vec<AuditEntry> {
        let mut entries = std::mem::take(&mut *self.audit.lock().expect("audit lock"));
        entries.sort_by(|a, b| a.request_hash.cmp(&b.request_hash));
        entries.dedup_by(|a, b| a.request_hash == b.request_hash);
        entries
    }

    pub fn transcript_snapshot(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }
}
