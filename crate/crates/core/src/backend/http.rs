use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::limit::{Clock, ConcurrencyGate, RateLimiter, SystemClock};
use super::{BackendError, BackendPolicy, ChatBackend, ChatRequest, ChatResponse, Usage};

pub const API_KEY_ENV: &str = "ELECTOSIM_API_KEY";
pub const BASE_URL_ENV: &str = "ELECTOSIM_BASE_URL";

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

/// Serializes a request into the chat-completions JSON body.
pub(crate) fn encode_request(req: &ChatRequest) -> String {
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = &req.system_text {
        messages.push(WireMessage { role: "system", content: system });
    }
    messages.push(WireMessage { role: "user", content: &req.user_text });
    let body = WireRequest { model: &req.model_id, messages, temperature: req.temperature, max_tokens: req.max_tokens };
    serde_json::to_string(&body).expect("request body serializes")
}

fn decode_response(body: &str) -> Result<(String, Usage), BackendError> {
    let parsed: WireResponse = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let first = parsed.choices.into_iter().next().ok_or_else(|| BackendError::Malformed("no choices".into()))?;
    let text = first.message.content.ok_or_else(|| BackendError::Malformed("choice has no content".into()))?;
    Ok((text, parsed.usage.unwrap_or_default()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireReply {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Timeout,
    Connection(String),
}

/// One POST of a JSON body to the completions endpoint.
pub trait Transport: Send + Sync {
    fn post(&self, body: &str) -> Result<WireReply, TransportFailure>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl UreqTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build();
        let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        Self { agent: ureq::Agent::new_with_config(config), url, api_key }
    }

    /// Reads `ELECTOSIM_BASE_URL` and `ELECTOSIM_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self, BackendError> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| BackendError::Config(format!("{BASE_URL_ENV} is not set")))?;
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self::new(&base, key, timeout))
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Transport for UreqTransport {
    fn post(&self, body: &str) -> Result<WireReply, TransportFailure> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let retry_after = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                let body = resp.body_mut().read_to_string().map_err(|e| match e {
                    ureq::Error::Timeout(_) => TransportFailure::Timeout,
                    other => TransportFailure::Connection(other.to_string()),
                })?;
                Ok(WireReply { status, body, retry_after })
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportFailure::Timeout),
            Err(e) => Err(TransportFailure::Connection(e.to_string())),
        }
    }
}

/// Rate-limited, retrying client over any [`Transport`].
pub struct HttpBackend<T: Transport, C: Clock = SystemClock> {
    transport: T,
    policy: BackendPolicy,
    limiter: RateLimiter<C>,
    gate: ConcurrencyGate,
}

impl HttpBackend<UreqTransport, SystemClock> {
    pub fn from_env(policy: BackendPolicy) -> Result<Self, BackendError> {
        policy.validate()?;
        let transport = UreqTransport::from_env(policy.timeout)?;
        Ok(Self::with_transport(transport, policy, SystemClock::default()))
    }
}

impl<T: Transport, C: Clock> HttpBackend<T, C> {
    pub fn with_transport(transport: T, policy: BackendPolicy, clock: C) -> Self {
        let limiter = RateLimiter::new(clock, policy.requests_per_minute);
        let gate = ConcurrencyGate::new(policy.max_concurrency);
        Self { transport, policy, limiter, gate }
    }

    pub fn policy(&self) -> &BackendPolicy {
        &self.policy
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl<T: Transport, C: Clock> ChatBackend for HttpBackend<T, C> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let body = encode_request(req);
        let clock = self.limiter.clock();
        let max_attempts = self.policy.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let (outcome, latency) = {
                let _permit = self.gate.acquire();
                let start = self.limiter.acquire();
                let outcome = self.transport.post(&body);
                (outcome, clock.now().saturating_sub(start))
            };
            let (reason, hint) = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let (text, usage) = decode_response(&reply.body)?;
                    return Ok(ChatResponse { text, usage, latency, attempt_count: attempt });
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    return Err(BackendError::Auth { status: reply.status });
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    (format!("HTTP {}", reply.status), reply.retry_after)
                }
                Ok(reply) => return Err(BackendError::Http { status: reply.status, body: reply.body }),
                Err(TransportFailure::Timeout) => ("timeout".to_string(), None),
                Err(TransportFailure::Connection(e)) => (e, None),
            };
            if attempt >= max_attempts {
                warn!("giving up after {attempt} attempts: {reason}");
                return Err(BackendError::Exhausted { attempts: attempt, last: reason });
            }
            let delay = hint.map_or(self.policy.backoff(attempt), |h| h.max(self.policy.backoff(attempt)));
            debug!("attempt {attempt} failed ({reason}); retrying in {delay:?}");
            clock.sleep(delay.min(self.policy.backoff_cap));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_body_uses_openai_field_names() {
        let mut req = ChatRequest::new("gpt-4o", "hello");
        req.system_text = Some("be brief".into());
        req.max_tokens = 32;
        let v: serde_json::Value = serde_json::from_str(&encode_request(&req)).unwrap();
        assert_eq!(v["model"], "gpt-4o");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["max_tokens"], 32);
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["role"], "user");
        assert_eq!(v["messages"][1]["content"], "hello");
        assert_eq!(v.as_object().unwrap().len(), 4);
    }

    #[test]
    fn decodes_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Republican"}},{"message":{"content":"x"}}],
                       "usage":{"prompt_tokens":10,"completion_tokens":1,"total_tokens":11}}"#;
        let (text, usage) = decode_response(body).unwrap();
        assert_eq!(text, "Republican");
        assert_eq!(usage.total_tokens, 11);
        assert!(matches!(decode_response(r#"{"choices":[]}"#), Err(BackendError::Malformed(_))));
        assert!(matches!(decode_response("not json"), Err(BackendError::Malformed(_))));
    }

    #[test]
    fn url_joins_base() {
        let t = UreqTransport::new("http://localhost:8000/v1/", None, Duration::from_secs(1));
        assert_eq!(t.url(), "http://localhost:8000/v1/chat/completions");
    }
}
