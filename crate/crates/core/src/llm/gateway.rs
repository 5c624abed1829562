use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::provider::{
    api_key_env, split_model_id, AnthropicProvider, OpenAiCompatibleProvider, Provider,
    ProviderError, KNOWN_PROVIDERS,
};
use super::{
    ChatClient, ChatRequest, ChatResponse, Limiter, LlmError, Transcript, TranscriptEntry,
    UsageLedger,
};
use crate::http::HttpTransport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call providers, keep nothing.
    Live,
    /// Serve known digests from the transcript, call providers for the rest and append them.
    Record,
    /// Serve only from the transcript; never touch the network.
    Replay,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode `{other}` (live|record|replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            jitter: false,
        }
    }

    /// Delay before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)))
            .min(self.max_delay);
        if self.jitter && !exp.is_zero() {
            exp.mul_f64(0.5 + rand::random::<f64>() * 0.5)
        } else {
            exp
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayConfig {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

pub struct Gateway {
    mode: Mode,
    config: GatewayConfig,
    providers: HashMap<String, Arc<dyn Provider>>,
    limiters: HashMap<String, Limiter>,
    transcript: Mutex<Transcript>,
    usage: Mutex<UsageLedger>,
    provider_attempts: AtomicUsize,
}

pub struct GatewayBuilder {
    mode: Mode,
    config: GatewayConfig,
    providers: Vec<Arc<dyn Provider>>,
    transcript: Option<Transcript>,
}

impl GatewayBuilder {
    pub fn new(mode: Mode) -> Self {
        GatewayBuilder {
            mode,
            config: GatewayConfig::default(),
            providers: Vec::new(),
            transcript: None,
        }
    }

    pub fn config(mut self, config: GatewayConfig) -> Self {
        self.config = config;
        self
    }

    pub fn provider(mut self, provider: Arc<dyn Provider>) -> Self {
        self.providers.push(provider);
        self
    }

    pub fn transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = Some(transcript);
        self
    }

    /// Registers the built-in HTTP provider for each model's provider prefix,
    /// reading its key from `FAULTLOOM_API_KEY_<PROVIDER>`.
    pub fn providers_from_env(
        mut self,
        model_ids: &[String],
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, LlmError> {
        let mut done: Vec<&str> = Vec::new();
        for model_id in model_ids {
            let (name, _) =
                split_model_id(model_id).ok_or_else(|| LlmError::UnknownModel(model_id.clone()))?;
            if done.contains(&name) {
                continue;
            }
            let base = KNOWN_PROVIDERS
                .iter()
                .find(|(p, _)| *p == name)
                .map(|(_, base)| *base)
                .ok_or_else(|| LlmError::UnknownModel(model_id.clone()))?;
            let env = api_key_env(name);
            let key = std::env::var(&env)
                .ok()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| LlmError::MissingCredential {
                    provider: name.to_string(),
                    env: env.clone(),
                })?;
            let provider: Arc<dyn Provider> = if name == "anthropic" {
                Arc::new(AnthropicProvider::new(base, key, transport.clone()))
            } else {
                Arc::new(OpenAiCompatibleProvider::new(name, base, key, transport.clone()))
            };
            self.providers.push(provider);
            done.push(name);
        }
        Ok(self)
    }

    pub fn build(self) -> Result<Gateway, LlmError> {
        if self.mode == Mode::Replay && self.transcript.is_none() {
            return Err(LlmError::Transcript("replay mode requires a transcript".into()));
        }
        let mut providers = HashMap::new();
        let mut limiters = HashMap::new();
        for p in self.providers {
            let name = p.name().to_string();
            limiters.insert(
                name.clone(),
                Limiter::new(self.config.max_in_flight, self.config.requests_per_minute),
            );
            providers.insert(name, p);
        }
        Ok(Gateway {
            mode: self.mode,
            config: self.config,
            providers,
            limiters,
            transcript: Mutex::new(self.transcript.unwrap_or_default()),
            usage: Mutex::new(UsageLedger::default()),
            provider_attempts: AtomicUsize::new(0),
        })
    }
}

impl Gateway {
    pub fn replay(transcript: Transcript) -> Self {
        GatewayBuilder::new(Mode::Replay)
            .transcript(transcript)
            .build()
            .expect("transcript supplied")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Provider attempts made so far; always zero in replay mode.
    pub fn provider_attempts(&self) -> usize {
        self.provider_attempts.load(Ordering::SeqCst)
    }

    pub fn usage(&self) -> UsageLedger {
        self.usage.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Copy of every transcript entry, in recording order.
    pub fn transcript_entries(&self) -> Vec<TranscriptEntry> {
        self.transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entries()
            .to_vec()
    }

    pub fn transcript_len(&self) -> usize {
        self.transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    fn stored(&self, digest: &str) -> Option<ChatResponse> {
        self.transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(digest)
            .cloned()
    }

    fn call_live(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let (name, model) = split_model_id(&request.model_id)
            .ok_or_else(|| LlmError::UnknownModel(request.model_id.clone()))?;
        let provider = self
            .providers
            .get(name)
            .ok_or_else(|| LlmError::UnknownModel(request.model_id.clone()))?;
        let limiter = &self.limiters[name];
        let attempts = self.config.retry.max_attempts.max(1);

        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let outcome = {
                let _permit = limiter.acquire();
                self.provider_attempts.fetch_add(1, Ordering::SeqCst);
                provider.send(model, request)
            };
            match outcome {
                Ok(mut response) => {
                    response
                        .provider_meta
                        .insert("attempts".into(), serde_json::json!(attempt));
                    return Ok(response);
                }
                Err(ProviderError::Rejected { status, reason }) => {
                    return Err(LlmError::Rejected {
                        model: request.model_id.clone(),
                        status,
                        reason,
                    })
                }
                Err(err) => {
                    let wait = match &err {
                        ProviderError::RateLimited {
                            retry_after: Some(d),
                            ..
                        } => (*d).min(self.config.retry.max_delay),
                        _ => self.config.retry.delay(attempt),
                    };
                    last_error = err.to_string();
                    tracing::debug!(model = %request.model_id, attempt, "retrying: {last_error}");
                    if attempt < attempts && !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
            }
        }
        Err(LlmError::RetriesExhausted {
            model: request.model_id.clone(),
            attempts,
            last_error,
        })
    }
}

impl ChatClient for Gateway {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let digest = request.digest();
        let response = match self.mode {
            Mode::Replay => self
                .stored(&digest)
                .ok_or(LlmError::ReplayMiss { digest })?,
            Mode::Record => match self.stored(&digest) {
                Some(hit) => hit,
                None => {
                    let fresh = self.call_live(request)?;
                    let mut t = self.transcript.lock().unwrap_or_else(|e| e.into_inner());
                    match t.get(&digest) {
                        // a concurrent identical request got there first
                        Some(existing) => existing.clone(),
                        None => {
                            t.append(TranscriptEntry {
                                request_digest: digest,
                                response: fresh.clone(),
                            })?;
                            fresh
                        }
                    }
                }
            },
            Mode::Live => self.call_live(request)?,
        };
        self.usage
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .record(&request.model_id, &response);
        Ok(response)
    }
}
