//! Inductive qualitative codebook generation.
//!
//! Documents are summarized into short points, the points are embedded and
//! clustered, a codebook is grown cluster by cluster with nearest-code
//! retrieval, and the finished codebook is consolidated into themes. A
//! simulator produces labelled synthetic corpora and an evaluation module
//! scores recovered themes against the planted sub-themes.

pub mod domain;
pub mod error;
pub mod evaluation;
pub mod gateway;
pub mod induction;
pub mod pipeline;
pub mod semantic;
pub mod simulator;
pub mod summarization;
pub mod templates;
pub mod themes;
pub mod workers;

use domain::{EmbeddingVector, RunConfig};
use gateway::{ChatRequest, Gateway, GatewayError};
use templates::TemplateSet;

pub use error::{ParseError, StageError};

/// Everything a stage needs to talk to models: the gateway, the prompt
/// templates and the effective configuration.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub config: &'a RunConfig,
    pub workers: usize,
}

impl<'a> Context<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet, config: &'a RunConfig) -> Self {
        Self {
            gateway,
            templates,
            config,
            workers: workers::DEFAULT_WORKERS,
        }
    }

    /// Sends `prompt` to the configured chat model.
    pub fn chat(&self, prompt: &str) -> Result<String, GatewayError> {
        self.chat_with(&self.config.chat_model_id, prompt)
    }

    pub fn chat_with(&self, model_id: &str, prompt: &str) -> Result<String, GatewayError> {
        let req = ChatRequest::new(model_id, prompt, self.config.temperature);
        self.gateway.chat(&req)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        self.gateway.embed(texts, &self.config.embed_model_id)
    }
}
