//! OpenAI-compatible chat-completions client with retries, bounded batch
//! concurrency and verbatim response capture.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::Rng;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{ChatMessage, PromptBundle};

fn default_timeout() -> u64 {
    600
}

fn default_retries() -> u32 {
    5
}

/// One configured model behind an OpenAI-compatible gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    /// Display name, used in reports and on the command line.
    pub name: String,
    /// Model identifier sent on the wire; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    /// Base URL; requests go to `{base_url}/v1/chat/completions`.
    pub base_url: String,
    /// Environment variable holding the API key. No auth header when unset.
    #[serde(default)]
    pub api_key_ref: Option<String>,
    pub max_context: usize,
    #[serde(default = "default_timeout")]
    pub request_timeout: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
}

impl ModelEndpoint {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>) -> Self {
        ModelEndpoint {
            name: name.into(),
            model: None,
            base_url: base_url.into(),
            api_key_ref: None,
            max_context: 128_000,
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            max_output_tokens: None,
        }
    }

    pub fn model_id(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_context == 0 {
            return Err(LlmError::InvalidEndpoint(format!("{}: max_context must be > 0", self.name)));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidEndpoint(format!("{}: temperature must be >= 0", self.name)));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(LlmError::InvalidEndpoint(format!("{}: base_url must be http(s)", self.name)));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// A completed request with its verbatim response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub request_id: String,
    pub endpoint_name: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub messages: Vec<ChatMessage>,
    pub shot_mode: usize,
    /// The assistant message content, byte-exact.
    pub raw_response_text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    pub attempts: u32,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum LlmError {
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("authentication failed ({status}): {body}")]
    AuthFailure { status: u16, body: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider error {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected response: {0}")]
    InvalidResponse(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
}

impl LlmError {
    pub fn code(&self) -> &'static str {
        match self {
            LlmError::MissingCredential(_) => "MissingCredential",
            LlmError::AuthFailure { .. } => "AuthFailure",
            LlmError::RateLimited { .. } => "RateLimited",
            LlmError::ProviderError { .. } => "ProviderError",
            LlmError::ContextOverflow(_) => "ContextOverflow",
            LlmError::Transport { .. } => "Transport",
            LlmError::InvalidResponse(_) => "InvalidResponse",
            LlmError::InvalidEndpoint(_) => "InvalidEndpoint",
        }
    }
}

/// Exponential backoff with jitter: attempt `n` (0-based) waits a random
/// duration in `[d/2, d]` where `d = min(cap, base * 2^n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self.base.saturating_mul(1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX));
        let ceiling = exp.min(self.cap);
        let factor = rand::thread_rng().gen_range(0.5..=1.0);
        ceiling.mul_f64(factor)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    stream: bool,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(String, Option<Usage>),
    Retry(LlmError),
    Fail(LlmError),
}

/// Blocking chat-completions client. Cheap to clone and safe to share
/// between threads.
#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl Default for LlmClient {
    fn default() -> Self {
        Self::new()
    }
}

impl LlmClient {
    pub fn new() -> Self {
        LlmClient {
            http: reqwest::blocking::Client::new(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Sends one bundle, retrying 429, 5xx and transport failures up to
    /// `endpoint.max_retries` times.
    pub fn complete(&self, endpoint: &ModelEndpoint, bundle: &PromptBundle) -> Result<CompletionRecord, LlmError> {
        endpoint.validate()?;
        if bundle.token_estimate > endpoint.max_context {
            return Err(LlmError::ContextOverflow(format!(
                "estimated {} tokens, endpoint {} allows {}",
                bundle.token_estimate, endpoint.name, endpoint.max_context
            )));
        }
        let api_key = match &endpoint.api_key_ref {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingCredential(var.clone()))?),
            None => None,
        };
        let body = ChatRequest {
            model: endpoint.model_id(),
            messages: &bundle.messages,
            temperature: endpoint.temperature,
            max_tokens: endpoint.max_output_tokens,
            stream: false,
        };
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = self.attempt(endpoint, api_key.as_deref(), &body, attempts);
            let err = match outcome {
                Attempt::Done(text, usage) => {
                    return Ok(CompletionRecord {
                        request_id: uuid::Uuid::new_v4().to_string(),
                        endpoint_name: endpoint.name.clone(),
                        model: endpoint.model_id().to_string(),
                        temperature: endpoint.temperature,
                        max_output_tokens: endpoint.max_output_tokens,
                        messages: bundle.messages.clone(),
                        shot_mode: bundle.shot_mode,
                        raw_response_text: text,
                        usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts,
                        created_at: Utc::now(),
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => e,
            };
            if attempts > endpoint.max_retries {
                return Err(err);
            }
            let delay = self.retry.delay(attempts - 1);
            tracing::debug!(endpoint = %endpoint.name, attempts, ?delay, error = %err, "retrying");
            std::thread::sleep(delay);
        }
    }

    fn attempt(&self, endpoint: &ModelEndpoint, api_key: Option<&str>, body: &ChatRequest<'_>, attempts: u32) -> Attempt {
        let mut req = self
            .http
            .post(endpoint.url())
            .timeout(Duration::from_secs(endpoint.request_timeout))
            .json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        if status.is_success() {
            return match serde_json::from_str::<ChatResponse>(&text) {
                Ok(parsed) => match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
                    Some(content) => Attempt::Done(
                        content,
                        parsed.usage.map(|u| Usage {
                            prompt_tokens: u.prompt_tokens,
                            completion_tokens: u.completion_tokens,
                        }),
                    ),
                    None => Attempt::Fail(LlmError::InvalidResponse("no message content in response".into())),
                },
                Err(e) => Attempt::Fail(LlmError::InvalidResponse(e.to_string())),
            };
        }
        let code = status.as_u16();
        match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Attempt::Fail(LlmError::AuthFailure { status: code, body: text }),
            StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(LlmError::RateLimited { attempts }),
            s if s.is_server_error() => Attempt::Retry(LlmError::ProviderError { status: code, body: text }),
            _ if is_context_overflow(code, &text) => Attempt::Fail(LlmError::ContextOverflow(text)),
            _ => Attempt::Fail(LlmError::ProviderError { status: code, body: text }),
        }
    }

    /// Runs bundles with at most `parallelism` requests in flight. Output
    /// order matches input order; failures stay per item.
    pub fn complete_batch(
        &self,
        endpoint: &ModelEndpoint,
        bundles: &[PromptBundle],
        parallelism: usize,
    ) -> Vec<Result<CompletionRecord, LlmError>> {
        run_bounded(bundles, parallelism, |b| self.complete(endpoint, b))
    }
}

fn is_context_overflow(status: u16, body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    (status == 400 || status == 413 || status == 422)
        && (lower.contains("context_length_exceeded")
            || lower.contains("maximum context length")
            || lower.contains("context window")
            || lower.contains("too many tokens"))
}

/// Maps `f` over `items` on at most `parallelism` scoped threads, keeping
/// input order.
pub fn run_bounded<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().expect("slot lock poisoned") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock poisoned").expect("every slot is filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy::default();
        for n in 0..40 {
            let d = p.delay(n);
            assert!(d <= Duration::from_secs(60));
        }
        let first = p.delay(0);
        assert!(first >= Duration::from_millis(500) && first <= Duration::from_secs(1));
    }

    #[test]
    fn endpoint_validation() {
        let mut e = ModelEndpoint::new("m", "http://localhost:1");
        assert!(e.validate().is_ok());
        e.max_context = 0;
        assert!(e.validate().is_err());
        let mut e = ModelEndpoint::new("m", "ftp://x");
        assert!(e.validate().is_err());
        e.base_url = "http://x".into();
        e.temperature = -1.0;
        assert!(e.validate().is_err());
    }

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<usize> = (0..50).collect();
        let out = run_bounded(&items, 7, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(run_bounded(&Vec::<usize>::new(), 3, |x| *x).is_empty());
    }

    #[test]
    fn context_overflow_detection() {
        assert!(is_context_overflow(400, r#"{"error":{"code":"context_length_exceeded"}}"#));
        assert!(!is_context_overflow(400, "bad request"));
    }
}
