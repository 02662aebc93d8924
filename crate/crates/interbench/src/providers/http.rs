//! HTTP chat-completion client with retry/backoff and bounded concurrency.
//!
//! Speaks the common `/chat/completions` JSON dialect, which every model
//! family the experiments target is reachable through. API keys come from the
//! environment only; config files never hold secrets.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    CallTag, CompletionRequest, CompletionResponse, FinishReason, Provider, ProviderError,
    TokenUsage,
};

/// One provider endpoint as configured in a plan file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored in config.
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout_s() -> f64 {
    120.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub backoff_factor: f64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 1000,
            backoff_factor: 2.0,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with full-range jitter in [0.5, 1.5).
    fn delay_for(&self, attempt: u32) -> Duration {
        let exp = self.base_delay_ms as f64 * self.backoff_factor.powi(attempt as i32 - 1);
        let capped = exp.min(self.max_delay_ms as f64);
        let jitter = rand::thread_rng().gen_range(0.5..1.5);
        Duration::from_millis((capped * jitter) as u64)
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
struct Limiter {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock().unwrap() += 1;
        self.limiter.available.notify_one();
    }
}

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
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpProvider {
    endpoint: ProviderEndpoint,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

impl HttpProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_s))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let limiter = Limiter::new(endpoint.concurrency);
        Ok(HttpProvider {
            endpoint,
            client,
            limiter,
        })
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        )
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.endpoint.api_key_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                ProviderError::Auth(format!("environment variable `{var}` is not set"))
            }),
        }
    }

    fn send_once(&self, req: &CompletionRequest) -> Result<ResponseOrRetry, ProviderError> {
        let body = WireRequest {
            model: &req.model_id,
            messages: req
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        super::Role::System => "system",
                        super::Role::User => "user",
                        super::Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
            seed: req.random_seed,
        };

        let mut builder = self.client.post(self.url()).json(&body);
        if let Some(key) = self.api_key()? {
            builder = builder.bearer_auth(key);
        }

        let started = Instant::now();
        let result = builder.send();
        let latency_ms = started.elapsed().as_millis() as u64;

        let response = match result {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() => {
                return Ok(ResponseOrRetry::Retry(format!("transport: {e}")))
            }
            Err(e) => return Err(ProviderError::Transport(e.to_string())),
        };

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("endpoint returned {status}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Ok(ResponseOrRetry::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Transport(format!(
                "endpoint returned {status}"
            )));
        }

        let wire: WireResponse = response
            .json()
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::MalformedResponse("no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(other) => {
                log::debug!("finish_reason `{other}` mapped to stop");
                FinishReason::Stop
            }
        };
        let content = choice
            .message
            .content
            .ok_or_else(|| ProviderError::MalformedResponse("choice has no content".into()))?;

        Ok(ResponseOrRetry::Done(CompletionResponse {
            content,
            finish_reason,
            latency_ms,
            token_usage: wire.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            attempts: 0, // filled by the retry loop
        }))
    }
}

enum ResponseOrRetry {
    Done(CompletionResponse),
    Retry(String),
}

impl Provider for HttpProvider {
    fn complete(
        &self,
        req: &CompletionRequest,
        _tag: &CallTag,
    ) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let _permit = self.limiter.acquire();
        let policy = &self.endpoint.retry;

        let mut last_reason = String::new();
        for attempt in 1..=policy.max_attempts {
            match self.send_once(req)? {
                ResponseOrRetry::Done(mut response) => {
                    response.attempts = attempt;
                    return Ok(response);
                }
                ResponseOrRetry::Retry(reason) => {
                    log::warn!(
                        "attempt {attempt}/{} against {} failed: {reason}",
                        policy.max_attempts,
                        self.endpoint.model_id
                    );
                    last_reason = reason;
                    if attempt < policy.max_attempts {
                        std::thread::sleep(policy.delay_for(attempt));
                    }
                }
            }
        }

        if last_reason.contains("429") {
            Err(ProviderError::RateLimited {
                attempts: policy.max_attempts,
            })
        } else {
            Err(ProviderError::Transport(format!(
                "retries exhausted after {} attempts: {last_reason}",
                policy.max_attempts
            )))
        }
    }

    fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }
}
