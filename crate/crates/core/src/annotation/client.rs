use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::response::parse_mllm_response;
use super::AnnotationError;

/// Failure modes of a single MLLM call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request rejected: {0}")]
    Fatal(String),
}

pub trait MllmClient: Send + Sync {
    fn model_name(&self) -> &str;
    /// Sends one prompt with a PNG image and returns the raw text reply.
    fn complete(&self, prompt: &str, image_png: &[u8]) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAnnotation {
    pub record_id: String,
    pub raw_response: String,
    pub region_count: usize,
    pub what: Vec<String>,
    pub why: Vec<String>,
    pub model_name: String,
    pub request_fingerprint: String,
    #[serde(default)]
    pub retries: u32,
}

/// `sha256(prompt || sha256(image))`, hex encoded.
pub fn request_fingerprint(prompt: &str, image_png: &[u8]) -> String {
    let image_digest = Sha256::digest(image_png);
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update(image_digest);
    hex::encode(h.finalize())
}

/// Calls the client, retrying transient failures with exponential backoff, then parses.
/// Rate-limit responses are surfaced to the caller with their retry-after hint.
pub fn request_annotation(
    client: &dyn MllmClient,
    record_id: &str,
    prompt: &str,
    overlay_png: &[u8],
    policy: &RetryPolicy,
) -> Result<CandidateAnnotation, AnnotationError> {
    let mut attempt = 0;
    let raw = loop {
        match client.complete(prompt, overlay_png) {
            Ok(text) => break text,
            Err(ClientError::Transient(msg)) => {
                if attempt >= policy.max_retries {
                    return Err(AnnotationError::Transport {
                        attempts: attempt + 1,
                        message: msg,
                    });
                }
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(ClientError::RateLimited { retry_after }) => {
                return Err(AnnotationError::RateLimited { retry_after })
            }
            Err(ClientError::Fatal(msg)) => {
                return Err(AnnotationError::Transport {
                    attempts: attempt + 1,
                    message: msg,
                })
            }
        }
    };
    let parsed = parse_mllm_response(&raw)?;
    Ok(CandidateAnnotation {
        record_id: record_id.to_string(),
        raw_response: raw,
        region_count: parsed.region_count,
        what: parsed.what,
        why: parsed.why,
        model_name: client.model_name().to_string(),
        request_fingerprint: request_fingerprint(prompt, overlay_png),
        retries: attempt,
    })
}

pub const DEFAULT_API_KEY_ENV: &str = "LLADA_MLLM_API_KEY";

/// Client for OpenAI-compatible chat-completions endpoints that accept inline images.
pub struct OpenAiCompatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for OpenAiCompatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatClient")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl OpenAiCompatClient {
    /// `endpoint` is the full chat-completions URL. The key is read from `api_key_env`
    /// if that variable is set.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            agent: config.into(),
        }
    }
}

fn retry_after(value: Option<&str>) -> Option<Duration> {
    value?.trim().parse::<f64>().ok().filter(|s| *s >= 0.0).map(Duration::from_secs_f64)
}

impl MllmClient for OpenAiCompatClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, image_png: &[u8]) -> Result<String, ClientError> {
        let image_url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(image_png)
        );
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": image_url}},
                ],
            }],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ClientError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let hint = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok());
            return Err(ClientError::RateLimited {
                retry_after: retry_after(hint),
            });
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transient(e.to_string()))?;
        if status >= 500 {
            return Err(ClientError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(ClientError::Fatal(format!("HTTP {status}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Fatal(format!("bad JSON reply: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ClientError::Fatal("reply has no choices[0].message.content".into()))
    }
}
