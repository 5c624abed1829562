//! HTTP chat providers.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;

use super::{ChatRequest, ChatResponse};
use crate::http::{HttpRequest, HttpResponse, HttpTransport};

/// Providers addressable out of the box, with their API base URLs.
pub const KNOWN_PROVIDERS: &[(&str, &str)] = &[
    ("openai", "https://api.openai.com/v1"),
    ("anthropic", "https://api.anthropic.com/v1"),
    ("google", "https://generativelanguage.googleapis.com/v1beta/openai"),
    ("deepseek", "https://api.deepseek.com/v1"),
];

/// Name of the environment variable holding a provider's API key.
pub fn api_key_env(provider: &str) -> String {
    format!(
        "FAULTLOOM_API_KEY_{}",
        provider.to_ascii_uppercase().replace('-', "_")
    )
}

/// Splits `provider/model`; the model part may itself contain slashes.
pub fn split_model_id(model_id: &str) -> Option<(&str, &str)> {
    let (provider, model) = model_id.split_once('/')?;
    (!provider.is_empty() && !model.is_empty()).then_some((provider, model))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("rate limited: {reason}")]
    RateLimited {
        reason: String,
        retry_after: Option<Duration>,
    },
    #[error("rejected with status {status}: {reason}")]
    Rejected { status: u16, reason: String },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, ProviderError::Rejected { .. })
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// One attempt; retries live in the gateway.
    fn send(&self, model: &str, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

fn classify_status(response: &HttpResponse) -> Result<(), ProviderError> {
    let snippet: String = response.body.chars().take(300).collect();
    match response.status {
        200..=299 => Ok(()),
        429 => Err(ProviderError::RateLimited {
            reason: snippet,
            retry_after: response
                .header("retry-after")
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs),
        }),
        408 | 500..=599 => Err(ProviderError::Transient(format!(
            "status {}: {snippet}",
            response.status
        ))),
        status => Err(ProviderError::Rejected {
            status,
            reason: snippet,
        }),
    }
}

fn parse_body(response: &HttpResponse) -> Result<Value, ProviderError> {
    serde_json::from_str(&response.body)
        .map_err(|e| ProviderError::Transient(format!("unparseable provider body: {e}")))
}

fn finish(
    text: String,
    input_tokens: u64,
    output_tokens: u64,
    started: Instant,
    stop: Option<&str>,
    truncated: bool,
) -> Result<ChatResponse, ProviderError> {
    if text.is_empty() && !truncated {
        return Err(ProviderError::Transient("empty completion".into()));
    }
    let mut provider_meta = BTreeMap::new();
    if let Some(stop) = stop {
        provider_meta.insert("finish_reason".into(), json!(stop));
    }
    if truncated {
        provider_meta.insert("truncated".into(), json!(true));
    }
    Ok(ChatResponse {
        text,
        input_tokens,
        output_tokens,
        latency_ms: started.elapsed().as_millis() as u64,
        provider_meta,
    })
}

/// Chat-completions style API (OpenAI and compatible endpoints).
pub struct OpenAiCompatibleProvider {
    name: String,
    base_url: String,
    api_key: String,
    transport: Arc<dyn HttpTransport>,
}

impl OpenAiCompatibleProvider {
    pub fn new(
        name: impl Into<String>,
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        OpenAiCompatibleProvider {
            name: name.into(),
            base_url: base_url.into(),
            api_key: api_key.into(),
            transport,
        }
    }
}

impl Provider for OpenAiCompatibleProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, model: &str, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let token_field = if self.name == "openai" {
            "max_completion_tokens"
        } else {
            "max_tokens"
        };
        let mut body = json!({
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
        });
        body[token_field] = json!(request.max_output_tokens);
        let http = HttpRequest::post_json(
            format!("{}/chat/completions", self.base_url.trim_end_matches('/')),
            body.to_string(),
        )
        .header("authorization", format!("Bearer {}", self.api_key));

        let started = Instant::now();
        let response = self
            .transport
            .send(&http)
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        classify_status(&response)?;
        let v = parse_body(&response)?;
        let choice = &v["choices"][0];
        let text = choice["message"]["content"].as_str().unwrap_or("").to_string();
        let stop = choice["finish_reason"].as_str();
        finish(
            text,
            v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            started,
            stop,
            stop == Some("length"),
        )
    }
}

/// Anthropic messages API.
pub struct AnthropicProvider {
    base_url: String,
    api_key: String,
    transport: Arc<dyn HttpTransport>,
}

impl AnthropicProvider {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        AnthropicProvider {
            base_url: base_url.into(),
            api_key: api_key.into(),
            transport,
        }
    }
}

impl Provider for AnthropicProvider {
    fn name(&self) -> &str {
        "anthropic"
    }

    fn send(&self, model: &str, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = json!({
            "model": model,
            "system": request.system_text,
            "messages": [{"role": "user", "content": request.user_text}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        let http = HttpRequest::post_json(
            format!("{}/messages", self.base_url.trim_end_matches('/')),
            body.to_string(),
        )
        .header("x-api-key", self.api_key.clone())
        .header("anthropic-version", "2023-06-01");

        let started = Instant::now();
        let response = self
            .transport
            .send(&http)
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        // 529 is Anthropic's "overloaded"
        classify_status(&response)?;
        let v = parse_body(&response)?;
        let text: String = v["content"]
            .as_array()
            .map(|blocks| {
                blocks
                    .iter()
                    .filter_map(|b| b["text"].as_str())
                    .collect::<Vec<_>>()
                    .join("")
            })
            .unwrap_or_default();
        let stop = v["stop_reason"].as_str();
        finish(
            text,
            v["usage"]["input_tokens"].as_u64().unwrap_or(0),
            v["usage"]["output_tokens"].as_u64().unwrap_or(0),
            started,
            stop,
            stop == Some("max_tokens"),
        )
    }
}
