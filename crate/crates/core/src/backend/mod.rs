//! Chat-completion backends.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `/chat/completions` wire
//! format with rate limiting, a concurrency ceiling and retries.
//! [`MockBackend`] answers from deterministic rulesets so whole runs can be
//! reproduced offline.

mod http;
mod limit;
pub mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::IdeologyLabel;

pub use http::{HttpBackend, Transport, TransportFailure, UreqTransport, WireReply, API_KEY_ENV, BASE_URL_ENV};
pub use limit::{Clock, ConcurrencyGate, FakeClock, Permit, RateLimiter, SystemClock, RATE_WINDOW};
pub use mock::{demographic_ideology, logistic, mock_policy_respond, MockBackend, MockRuleset, ScriptedReplies};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;

/// Which question of the pipeline a request asks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ideology,
    Vote,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ideology => "ideology",
            Stage::Vote => "vote",
        }
    }
}

/// Routing metadata the pipeline attaches to each request. Never sent over
/// the wire; the mock backend uses it to find the persona being simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestTag {
    pub persona_id: String,
    pub stage: Stage,
    /// 1 for the first ask, 2 for the first re-ask, ...
    pub attempt: u32,
    /// Ideology inferred by an earlier step, if any.
    pub ideology: Option<IdeologyLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    pub tag: Option<RequestTag>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            system_text: None,
            user_text: user_text.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 256,
            model_id: model_id.into(),
            tag: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("user text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
    pub attempt_count: u32,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Throughput and retry limits for a wire backend. Durations are written as
/// milliseconds in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendPolicy {
    pub max_concurrency: usize,
    pub requests_per_minute: usize,
    pub max_retries: u32,
    #[serde(with = "duration_ms", rename = "backoff_base_ms")]
    pub backoff_base: Duration,
    #[serde(with = "duration_ms", rename = "backoff_cap_ms")]
    pub backoff_cap: Duration,
    #[serde(with = "duration_ms", rename = "timeout_ms")]
    pub timeout: Duration,
}

impl Default for BackendPolicy {
    fn default() -> Self {
        Self {
            max_concurrency: 8,
            requests_per_minute: 600,
            max_retries: 5,
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(30),
            timeout: Duration::from_secs(60),
        }
    }
}

impl BackendPolicy {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.to_string()));
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be positive");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be positive");
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive");
        }
        if self.backoff_cap < self.backoff_base {
            return bad("backoff cap must be at least the backoff base");
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based): `base · 2^(retry-1)`, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.backoff_base.saturating_mul(factor).min(self.backoff_cap)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock script has no entry for persona {0:?}")]
    UnknownPersona(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Errors that must stop a whole run rather than a single persona.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::Auth { .. } | BackendError::Config(_))
    }
}

/// A blocking chat-completion service shared by many worker threads.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(req)
    }
}
