use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::prompting::ChatMessage;

/// Where a profile's requests go.
#[derive(Clone)]
pub enum Backend {
    Http,
    Mock(Arc<MockProvider>),
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Http => f.write_str("Http"),
            Backend::Mock(m) => write!(f, "Mock({} left)", m.remaining()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProviderProfile {
    pub name: String,
    pub endpoint_url: String,
    pub model_id: String,
    /// `None` leaves the provider's default in place.
    pub temperature: Option<f64>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub rate_limit_per_minute: u32,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub backend: Backend,
}

impl ProviderProfile {
    pub fn http(name: &str, endpoint_url: &str, model_id: &str) -> Self {
        Self {
            name: name.to_string(),
            endpoint_url: endpoint_url.to_string(),
            model_id: model_id.to_string(),
            temperature: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            rate_limit_per_minute: 60,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
            api_key_env: default_key_env(name),
            backend: Backend::Http,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rate_limit_per_minute == 0 {
            return Err(format!("profile '{}': rate limit must be positive", self.name));
        }
        if self.model_id.is_empty() {
            return Err(format!("profile '{}': model_id is empty", self.name));
        }
        if matches!(self.backend, Backend::Http) && self.endpoint_url.is_empty() {
            return Err(format!("profile '{}': endpoint_url is empty", self.name));
        }
        Ok(())
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock(_))
    }
}

/// `gpt-4o` -> `GPT_4O_API_KEY`.
pub fn default_key_env(profile_name: &str) -> String {
    let mut s: String = profile_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    s.push_str("_API_KEY");
    s
}

/// One canned provider behavior. In configuration a bare string is a reply;
/// tables select the other forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockOutcome {
    Reply(String),
    WithReasoning { reply: String, reasoning: String },
    /// Replies after blocking for `delay_ms` of wall-clock time.
    Delayed { reply: String, delay_ms: u64 },
    Fail { fail: String },
    Malformed { malformed: String },
}

/// Replays a script of outcomes in order; each call consumes one.
#[derive(Debug)]
pub struct MockProvider {
    script: Mutex<VecDeque<MockOutcome>>,
    calls: Mutex<u32>,
}

impl MockProvider {
    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }

    pub fn calls(&self) -> u32 {
        *self.calls.lock().unwrap()
    }

    pub(crate) fn next(&self) -> Option<MockOutcome> {
        *self.calls.lock().unwrap() += 1;
        self.script.lock().unwrap().pop_front()
    }
}

/// A profile backed by a scripted mock. Empty scripts are rejected so tests
/// can never run against a provider that silently does nothing.
pub fn mock_provider(script: Vec<MockOutcome>) -> Result<ProviderProfile, String> {
    mock_provider_named("mock", script)
}

pub fn mock_provider_named(name: &str, script: Vec<MockOutcome>) -> Result<ProviderProfile, String> {
    if script.is_empty() {
        return Err("mock script must not be empty".into());
    }
    let mut profile = ProviderProfile::http(name, "", "mock-model");
    profile.rate_limit_per_minute = u32::MAX;
    profile.backoff_base = Duration::from_millis(10);
    profile.backend = Backend::Mock(Arc::new(MockProvider {
        script: Mutex::new(script.into()),
        calls: Mutex::new(0),
    }));
    Ok(profile)
}

/// Parsed provider reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub reasoning: Option<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttemptError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    Retryable(String),
    /// Not worth retrying with the same request (e.g. 401).
    Fatal(String),
    Protocol(String),
    ScriptExhausted,
}

pub(crate) fn request_body(messages: &[ChatMessage], profile: &ProviderProfile) -> Value {
    let mut body = json!({ "model": profile.model_id, "messages": messages });
    if let Some(t) = profile.temperature {
        body["temperature"] = json!(t);
    }
    body
}

/// Reads `choices[0].message.content`, plus a separate reasoning channel when
/// the provider exposes one.
pub(crate) fn parse_reply(payload: &str) -> Result<ProviderReply, AttemptError> {
    let v: Value = serde_json::from_str(payload)
        .map_err(|e| AttemptError::Protocol(format!("response is not JSON: {e}")))?;
    let message = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| AttemptError::Protocol("response has no choices[0].message".into()))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| AttemptError::Protocol("choices[0].message.content is missing or empty".into()))?;
    let reasoning = ["reasoning_content", "reasoning"]
        .iter()
        .find_map(|k| message.get(*k).and_then(Value::as_str))
        .map(str::to_string);
    let usage = v.get("usage");
    let tokens = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64);
    Ok(ProviderReply {
        text: text.to_string(),
        reasoning,
        prompt_tokens: tokens("prompt_tokens"),
        completion_tokens: tokens("completion_tokens"),
    })
}

pub(crate) fn send_http(messages: &[ChatMessage], profile: &ProviderProfile) -> Result<ProviderReply, AttemptError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(profile.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.post(&profile.endpoint_url).header("Content-Type", "application/json");
    if let Ok(key) = std::env::var(&profile.api_key_env) {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let body = request_body(messages, profile).to_string();
    let mut resp = req
        .send(body.as_bytes())
        .map_err(|e| AttemptError::Retryable(format!("{}: {e}", profile.endpoint_url)))?;
    let status = resp.status().as_u16();
    let payload = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| AttemptError::Retryable(format!("reading response body: {e}")))?;
    match status {
        200..=299 => parse_reply(&payload),
        408 | 429 | 500..=599 => Err(AttemptError::Retryable(format!("HTTP {status}: {}", snippet(&payload)))),
        _ => Err(AttemptError::Fatal(format!("HTTP {status}: {}", snippet(&payload)))),
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

pub(crate) fn send_mock(mock: &MockProvider) -> Result<ProviderReply, AttemptError> {
    let reply = |text: String, reasoning: Option<String>| ProviderReply {
        text,
        reasoning,
        prompt_tokens: None,
        completion_tokens: None,
    };
    match mock.next() {
        None => Err(AttemptError::ScriptExhausted),
        Some(MockOutcome::Reply(text)) => Ok(reply(text, None)),
        Some(MockOutcome::WithReasoning { reply: text, reasoning }) => Ok(reply(text, Some(reasoning))),
        Some(MockOutcome::Delayed { reply: text, delay_ms }) => {
            std::thread::sleep(std::time::Duration::from_millis(delay_ms));
            Ok(reply(text, None))
        }
        Some(MockOutcome::Fail { fail }) => Err(AttemptError::Retryable(fail)),
        Some(MockOutcome::Malformed { malformed }) => parse_reply(&malformed),
    }
}
