//! Chat-completion backends.
//!
//! Every prompt goes through a [`ChatBackend`]. Three implementations exist:
//! [`HttpBackend`] speaks the OpenAI-compatible chat-completions protocol,
//! [`MockBackend`] answers from a script, and [`ReplayBackend`] answers from
//! a cassette written by [`RecordingBackend`].

mod http;
mod mock;
mod replay;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{with_retries, HttpBackend, HttpReply, ReqwestTransport, RetryPolicy, Throttled, Transport};
pub use mock::{MockBackend, MockRequest, MockRule, RecordedCall};
pub use replay::{Cassette, CassetteEntry, RecordingBackend, ReplayBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the counts come from [`estimate_tokens`] rather than the provider.
    #[serde(default)]
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub model_id: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by provider")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider server error (status {status})")]
    Server { status: u16 },
    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("replay cache miss for prompt digest {digest}")]
    CacheMiss { digest: String },
    #[error("mock backend: {0}")]
    Mock(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("giving up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Network(_)
                | GatewayError::Timeout
                | GatewayError::RateLimited { .. }
                | GatewayError::Server { .. }
        )
    }
}

/// A chat-completion provider. Implementations must be callable from
/// several worker threads at once.
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError> {
        (**self).complete(messages, temperature)
    }
}

pub(crate) fn validate_request(messages: &[ChatMessage], temperature: f64) -> Result<(), GatewayError> {
    if messages.is_empty() {
        return Err(GatewayError::InvalidRequest("no messages".into()));
    }
    if !(0.0..=2.0).contains(&temperature) {
        return Err(GatewayError::InvalidRequest(format!(
            "temperature {temperature} outside [0, 2]"
        )));
    }
    if let Some(m) = messages
        .iter()
        .find(|m| m.role != Role::Assistant && m.content.is_empty())
    {
        return Err(GatewayError::InvalidRequest(format!("empty {:?} message", m.role)));
    }
    Ok(())
}

/// Characters per token assumed by [`estimate_tokens`].
pub const CHARS_PER_TOKEN: u64 = 4;

/// Approximate token count used when a provider reports no usage.
///
/// ASCII characters weigh one unit and every other character weighs
/// [`CHARS_PER_TOKEN`] units (non-Latin scripts tokenize close to one token
/// per character); the count is the total weight divided by
/// `CHARS_PER_TOKEN`, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    let weight: u64 = text
        .chars()
        .map(|c| if c.is_ascii() { 1 } else { CHARS_PER_TOKEN })
        .sum();
    weight.div_ceil(CHARS_PER_TOKEN)
}

pub fn estimate_message_tokens(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}

/// SHA-256 over the canonical JSON of the ordered messages, temperature and
/// model id. This is the cassette key.
pub fn request_digest(messages: &[ChatMessage], temperature: f64, model_id: &str) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        messages: &'a [ChatMessage],
        temperature: f64,
        model_id: &'a str,
    }
    let key = serde_json::to_vec(&Key {
        messages,
        temperature,
        model_id,
    })
    .expect("digest key serializes");
    hex::encode(Sha256::digest(&key))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model: String,
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Minimum spacing between requests, in milliseconds.
    pub min_interval_ms: u64,
    pub cassette: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            model: "gpt-4o-2024-08-06".into(),
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            timeout_secs: 120,
            max_retries: 5,
            min_interval_ms: 0,
            cassette: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Stable digest of the configuration for run manifests.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Builds an HTTP or replay backend. Mock backends carry a script and
    /// are constructed directly.
    pub fn build(&self) -> crate::Result<Arc<dyn ChatBackend>> {
        self.validate()?;
        let backend: Arc<dyn ChatBackend> = match self.kind {
            BackendKind::Http => {
                let api_key = std::env::var(&self.api_key_env).ok();
                Arc::new(HttpBackend::new(
                    &self.endpoint,
                    &self.model,
                    api_key,
                    Duration::from_secs(self.timeout_secs),
                    RetryPolicy {
                        max_retries: self.max_retries,
                        ..RetryPolicy::default()
                    },
                    Arc::new(ReqwestTransport::new()?),
                ))
            }
            BackendKind::Replay => {
                let path = self
                    .cassette
                    .as_ref()
                    .ok_or_else(|| crate::Error::invalid("replay backend needs a cassette path"))?;
                Arc::new(ReplayBackend::open(path, &self.model)?)
            }
            BackendKind::Mock => {
                return Err(crate::Error::invalid(
                    "mock backends are built from a script, not from configuration",
                ))
            }
        };
        if self.min_interval_ms > 0 {
            Ok(Arc::new(Throttled::new(
                backend,
                Duration::from_millis(self.min_interval_ms),
            )))
        } else {
            Ok(backend)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_empty_is_zero() {
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn estimate_4000_ascii_chars() {
        let sentence = "The quick brown fox jumps over the lazy dog. ";
        let text: String = sentence.chars().cycle().take(4000).collect();
        assert_eq!(text.len(), 4000);
        assert_eq!(estimate_tokens(&text), 1000);
    }

    #[test]
    fn estimate_counts_non_ascii_per_char() {
        assert_eq!(estimate_tokens("日本語"), 3);
        assert_eq!(estimate_tokens("abc"), 1);
    }

    #[test]
    fn digest_depends_on_all_parts() {
        let m = vec![ChatMessage::user("hi")];
        let d = request_digest(&m, 0.0, "m");
        assert_eq!(d.len(), 64);
        assert_eq!(d, request_digest(&m, 0.0, "m"));
        assert_ne!(d, request_digest(&m, 0.5, "m"));
        assert_ne!(d, request_digest(&m, 0.0, "n"));
        assert_ne!(d, request_digest(&[ChatMessage::system("hi")], 0.0, "m"));
    }

    #[test]
    fn request_validation() {
        assert!(validate_request(&[], 0.0).is_err());
        assert!(validate_request(&[ChatMessage::user("x")], 2.5).is_err());
        assert!(validate_request(&[ChatMessage::user("")], 0.0).is_err());
        assert!(validate_request(&[ChatMessage::user("x"), ChatMessage::assistant("")], 0.0).is_ok());
    }
}
