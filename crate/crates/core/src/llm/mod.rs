//! Provider-agnostic chat completion with record/replay.

mod digest;
mod extract;
mod gateway;
mod limiter;
mod provider;
mod transcript;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use digest::{canonical_json, digest_serialized, request_digest};
pub use extract::{extract_structured, ExtractError};
pub use gateway::{Gateway, GatewayBuilder, GatewayConfig, Mode, RetryPolicy};
pub use limiter::{Limiter, Permit};
pub use provider::{
    api_key_env, split_model_id, AnthropicProvider, OpenAiCompatibleProvider, Provider,
    ProviderError, KNOWN_PROVIDERS,
};
pub use transcript::{Transcript, TranscriptEntry};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    #[serde(default)]
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |why: &str| Err(LlmError::InvalidRequest(why.to_string()));
        if self.system_text.trim().is_empty() {
            return bad("system_text is empty");
        }
        if self.user_text.trim().is_empty() {
            return bad("user_text is empty");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        request_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, serde_json::Value>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("unknown model id `{0}` (expected <provider>/<model> with a configured provider)")]
    UnknownModel(String),
    #[error("missing credential for provider `{provider}`: set {env}")]
    MissingCredential { provider: String, env: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{model}: retries exhausted after {attempts} attempts: {last_error}")]
    RetriesExhausted {
        model: String,
        attempts: u32,
        last_error: String,
    },
    #[error("{model}: provider rejected request (status {status}): {reason}")]
    Rejected {
        model: String,
        status: u16,
        reason: String,
    },
    #[error("replay miss: no transcript entry for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("transcript error: {0}")]
    Transcript(String),
}

impl LlmError {
    /// Stable machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::UnknownModel(_) => "unknown_model",
            LlmError::MissingCredential { .. } => "missing_credential",
            LlmError::InvalidRequest(_) => "invalid_request",
            LlmError::RetriesExhausted { .. } => "retries_exhausted",
            LlmError::Rejected { .. } => "rejected",
            LlmError::ReplayMiss { .. } => "replay_miss",
            LlmError::Transcript(_) => "transcript",
        }
    }
}

/// Anything that answers chat requests: the gateway, or a test double.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl ModelUsage {
    pub fn add(&mut self, response: &ChatResponse) {
        self.calls += 1;
        self.input_tokens += response.input_tokens;
        self.output_tokens += response.output_tokens;
    }

    pub fn merge(&mut self, other: &ModelUsage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }

    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

/// Token and call tallies keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub per_model: BTreeMap<String, ModelUsage>,
}

impl UsageLedger {
    pub fn record(&mut self, model_id: &str, response: &ChatResponse) {
        self.per_model
            .entry(model_id.to_string())
            .or_default()
            .add(response);
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (model, usage) in &other.per_model {
            self.per_model.entry(model.clone()).or_default().merge(usage);
        }
    }

    pub fn total(&self) -> ModelUsage {
        let mut t = ModelUsage::default();
        for u in self.per_model.values() {
            t.merge(u);
        }
        t
    }
}

const REPAIR_ECHO_LIMIT: usize = 2000;

/// Re-asks the original question with the rejected reply and the reason appended.
///
/// `retry` numbers the repair (1-based) so that two identical rejections still
/// produce distinct requests, and so distinct transcript entries.
pub fn repair_request(original: &ChatRequest, rejected_output: &str, problem: &str, retry: u32) -> ChatRequest {
    let echoed: String = rejected_output.chars().take(REPAIR_ECHO_LIMIT).collect();
    let mut request = original.clone();
    request.user_text = format!(
        "{}\n\n---\nYour previous reply could not be used (retry {retry}).\nProblem: {problem}\nPrevious reply:\n{echoed}\n---\nAnswer again with only the JSON object requested above.",
        original.user_text
    );
    request
}
