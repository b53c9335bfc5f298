use std::time::Duration;

use log::warn;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, GatewayError, ModelBackend};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Chat-completions style HTTP+JSON client. `base_url` is the API root,
/// e.g. `http://localhost:11434/v1`; requests go to `/chat/completions`
/// and `/embeddings` under it.
pub struct HttpBackend {
    client: Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

enum Failure {
    Retryable(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| GatewayError::Protocol(format!("building http client: {e}")))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut delay = self.retry.base_delay;
        let mut last = String::new();
        for attempt in 1..=self.retry.attempts.max(1) {
            match self.post_once(&url, body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!("{url}: attempt {attempt} failed: {msg}");
                    last = msg;
                    if attempt < self.retry.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.attempts.max(1),
            message: last,
        })
    }

    fn post_once(&self, url: &str, body: &serde_json::Value) -> Result<String, Failure> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Err(Failure::Retryable(format!("HTTP {status}: {text}")))
        } else {
            Err(Failure::Fatal(GatewayError::Protocol(format!("HTTP {status}: {text}"))))
        }
    }
}

impl ModelBackend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "stream": false,
        });
        let raw = self.post("chat/completions", &body)?;
        let parsed: ChatResponse =
            serde_json::from_str(&raw).map_err(|e| GatewayError::Protocol(format!("chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::Protocol("chat response has no choices".into()))
    }

    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": model_id, "input": texts });
        let raw = self.post("embeddings", &body)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_str(&raw).map_err(|e| GatewayError::Protocol(format!("embedding response: {e}")))?;
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
