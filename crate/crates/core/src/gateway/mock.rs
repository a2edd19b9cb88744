use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::{
    estimate_message_tokens, estimate_tokens, request_digest, validate_request, ChatBackend, ChatMessage, Completion,
    GatewayError, TokenUsage,
};

/// What a scripted rule sees for each call.
pub struct MockRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub digest: String,
}

impl MockRequest<'_> {
    pub fn system(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == super::Role::System)
            .map_or("", |m| m.content.as_str())
    }

    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == super::Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

pub type MockRule = Arc<dyn Fn(&MockRequest<'_>) -> Result<String, GatewayError> + Send + Sync>;

enum Script {
    Queue(Mutex<VecDeque<String>>),
    Keyed(HashMap<String, String>),
    Rule(MockRule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

/// Offline backend answering from a FIFO queue, a digest-keyed map, or a
/// rule function. Usage is always estimated.
pub struct MockBackend {
    model_id: String,
    script: Script,
    calls: Mutex<Vec<RecordedCall>>,
}

impl MockBackend {
    fn with_script(model_id: &str, script: Script) -> Self {
        Self {
            model_id: model_id.to_string(),
            script,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn queue(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::with_script(
            "mock",
            Script::Queue(Mutex::new(responses.into_iter().map(Into::into).collect())),
        )
    }

    /// Responses keyed by [`request_digest`] (computed with this backend's model id).
    pub fn keyed(responses: HashMap<String, String>) -> Self {
        Self::with_script("mock", Script::Keyed(responses))
    }

    pub fn rule(rule: impl Fn(&MockRequest<'_>) -> Result<String, GatewayError> + Send + Sync + 'static) -> Self {
        Self::with_script("mock", Script::Rule(Arc::new(rule)))
    }

    pub fn with_model_id(mut self, model_id: &str) -> Self {
        self.model_id = model_id.to_string();
        self
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().expect("mock lock poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("mock lock poisoned").len()
    }
}

impl ChatBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError> {
        validate_request(messages, temperature)?;
        self.calls.lock().expect("mock lock poisoned").push(RecordedCall {
            messages: messages.to_vec(),
            temperature,
        });
        let digest = request_digest(messages, temperature, &self.model_id);
        let text = match &self.script {
            Script::Queue(q) => q
                .lock()
                .expect("mock lock poisoned")
                .pop_front()
                .ok_or_else(|| GatewayError::Mock("response queue exhausted".into()))?,
            Script::Keyed(map) => map
                .get(&digest)
                .cloned()
                .ok_or_else(|| GatewayError::Mock(format!("no scripted response for {digest}")))?,
            Script::Rule(rule) => rule(&MockRequest {
                messages,
                temperature,
                digest,
            })?,
        };
        Ok(Completion {
            usage: TokenUsage {
                input_tokens: estimate_message_tokens(messages),
                output_tokens: estimate_tokens(&text),
                estimated: true,
            },
            text,
            model_id: self.model_id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_returns_scripted_text() {
        let m = MockBackend::queue(["{\"Column 1\": \"RecipeName\"}"]);
        let c = m.complete(&[ChatMessage::user("x")], 0.0).unwrap();
        assert_eq!(c.text, "{\"Column 1\": \"RecipeName\"}");
        assert!(c.usage.estimated);
        assert!(matches!(
            m.complete(&[ChatMessage::user("x")], 0.0),
            Err(GatewayError::Mock(_))
        ));
    }

    #[test]
    fn keyed_by_digest() {
        let msgs = vec![ChatMessage::user("p")];
        let d = request_digest(&msgs, 0.0, "mock");
        let m = MockBackend::keyed([(d, "answer".to_string())].into());
        assert_eq!(m.complete(&msgs, 0.0).unwrap().text, "answer");
        assert!(m.complete(&msgs, 0.5).is_err());
    }

    #[test]
    fn rule_sees_temperature() {
        let m = MockBackend::rule(|r| Ok(format!("t={}", r.temperature)));
        assert_eq!(m.complete(&[ChatMessage::user("x")], 0.7).unwrap().text, "t=0.7");
        assert_eq!(m.call_count(), 1);
    }
}
