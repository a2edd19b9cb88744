use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    estimate_message_tokens, estimate_tokens, validate_request, ChatBackend, ChatMessage, Completion, GatewayError,
    TokenUsage,
};

/// Raw HTTP reply handed back by a [`Transport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub retry_after: Option<Duration>,
    pub body: String,
}

/// Minimal POST-a-JSON-body transport, injectable for tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, GatewayError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> crate::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| crate::Error::invalid(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, GatewayError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Network(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Network(e.to_string())
            }
        })?;
        Ok(HttpReply {
            status,
            retry_after,
            body,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (zero-based).
    pub fn delay(&self, attempt: u32, err: &GatewayError) -> Duration {
        let backoff = self
            .base_delay
            .saturating_mul(1u32.checked_shl(attempt.min(30)).unwrap_or(u32::MAX));
        let wait = match err {
            GatewayError::RateLimited {
                retry_after: Some(after),
            } => *after,
            _ => backoff,
        };
        wait.min(self.max_delay)
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// retry budget is spent.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < policy.max_retries => {
                let wait = policy.delay(attempt, &e);
                log::warn!("attempt {} failed ({e}); retrying in {wait:?}", attempt + 1);
                thread::sleep(wait);
                attempt += 1;
            }
            Err(e) if e.is_retryable() => {
                return Err(GatewayError::RetriesExhausted {
                    attempts: attempt + 1,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    retry: RetryPolicy,
    transport: Arc<dyn Transport>,
}

impl HttpBackend {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            timeout,
            retry,
            transport,
        }
    }

    fn request_body(&self, messages: &[ChatMessage], temperature: f64) -> String {
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
        })
        .to_string()
    }
}

/// Maps a non-success status to an error, or parses a success body.
fn interpret_reply(reply: HttpReply, messages: &[ChatMessage], model: &str) -> Result<Completion, GatewayError> {
    match reply.status {
        200..=299 => {}
        429 => {
            return Err(GatewayError::RateLimited {
                retry_after: reply.retry_after,
            })
        }
        408 => return Err(GatewayError::Timeout),
        500..=599 => return Err(GatewayError::Server { status: reply.status }),
        status => {
            return Err(GatewayError::Provider {
                status,
                message: provider_message(&reply.body),
            })
        }
    }
    let v: Value =
        serde_json::from_str(&reply.body).map_err(|e| GatewayError::BadResponse(format!("invalid JSON: {e}")))?;
    if v.get("error").is_some_and(|e| !e.is_null()) {
        return Err(GatewayError::Provider {
            status: reply.status,
            message: provider_message(&reply.body),
        });
    }
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))?
        .to_string();
    let prompt = v.pointer("/usage/prompt_tokens").and_then(Value::as_u64);
    let completion = v.pointer("/usage/completion_tokens").and_then(Value::as_u64);
    let usage = match (prompt, completion) {
        (Some(input_tokens), Some(output_tokens)) => TokenUsage {
            input_tokens,
            output_tokens,
            estimated: false,
        },
        _ => TokenUsage {
            input_tokens: prompt.unwrap_or_else(|| estimate_message_tokens(messages)),
            output_tokens: completion.unwrap_or_else(|| estimate_tokens(&text)),
            estimated: true,
        },
    };
    let model_id = v.get("model").and_then(Value::as_str).unwrap_or(model).to_string();
    Ok(Completion { text, usage, model_id })
}

fn provider_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(500).collect())
}

impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError> {
        validate_request(messages, temperature)?;
        let body = self.request_body(messages, temperature);
        with_retries(&self.retry, |_| {
            let reply = self
                .transport
                .post_json(&self.url, self.api_key.as_deref(), &body, self.timeout)?;
            interpret_reply(reply, messages, &self.model)
        })
    }
}

/// Enforces a minimum spacing between calls to the wrapped backend.
pub struct Throttled<B> {
    inner: B,
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl<B> Throttled<B> {
    pub fn new(inner: B, interval: Duration) -> Self {
        Self {
            inner,
            interval,
            next_slot: Mutex::new(None),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Throttled<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError> {
        let wait = {
            let mut slot = self.next_slot.lock().expect("throttle lock poisoned");
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
        self.inner.complete(messages, temperature)
    }
}
