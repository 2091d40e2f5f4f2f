//! Chat-completion transport with retries, rate limiting and transcript capture.
//!
//! Every attempt, failed or not, becomes one [`TranscriptEntry`]. Transport
//! failures back off exponentially; replies that arrive but cannot be used are
//! retried immediately (with a corrective follow-up when the amount was out of
//! bounds). Both kinds of retry draw on the same `max_retries` budget.

pub mod clock;
mod provider;
pub mod rate_limit;
pub mod transcript;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use provider::{
    default_key_env, mock_provider, mock_provider_named, AttemptError, Backend, MockOutcome, MockProvider,
    ProviderProfile, ProviderReply,
};
pub use rate_limit::RateLimiter;
pub use transcript::{
    read_transcript, AttemptOutcome, JsonlTranscript, MemoryTranscript, TranscriptEntry, TranscriptSink,
};

use crate::prompting::{ChatMessage, PromptBundle};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider '{profile}' failed after {attempts} attempt(s): {last}")]
    Transport { profile: String, attempts: u32, last: String },
    #[error("provider '{profile}' returned a malformed payload: {detail}")]
    Protocol { profile: String, detail: String },
    #[error("mock script for '{0}' is exhausted")]
    ScriptExhausted(String),
    #[error("writing transcript: {0}")]
    Transcript(#[from] std::io::Error),
}

/// The result of one logical request, possibly spanning several attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    /// Identifiers of every attempt's transcript entry, in order.
    pub exchange_ids: Vec<String>,
    /// Messages of the final (successful) attempt.
    pub request_messages: Vec<ChatMessage>,
    pub response_text: String,
    pub reasoning_text: Option<String>,
    pub latency: Duration,
    pub attempt_count: u32,
    pub timestamp_ms: u64,
}

/// Where an exchange belongs; used to build stable transcript identifiers.
#[derive(Debug, Clone)]
pub struct ExchangeContext {
    pub game_id: String,
    pub round_index: u32,
    pub sample_index: u32,
    /// Seeds backoff jitter.
    pub seed: u64,
}

impl ExchangeContext {
    pub fn exchange_id(&self, attempt: u32) -> String {
        format!("{}/r{}/s{}/a{}", self.game_id, self.round_index, self.sample_index, attempt)
    }
}

/// What to do with a reply that arrived intact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict<T> {
    Accept(T),
    /// Ask again with the same messages.
    Retry(String),
    /// Ask again after appending the reply and a corrective user message.
    Remind(String),
}

pub struct Gateway {
    clock: Arc<dyn Clock>,
    limiters: Mutex<HashMap<String, Arc<Mutex<RateLimiter>>>>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(Arc::new(SystemClock))
    }
}

impl Gateway {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock, limiters: Mutex::new(HashMap::new()) }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn limiter(&self, profile: &ProviderProfile) -> Arc<Mutex<RateLimiter>> {
        let mut map = self.limiters.lock().unwrap();
        map.entry(profile.name.clone())
            .or_insert_with(|| Arc::new(Mutex::new(RateLimiter::per_minute(profile.rate_limit_per_minute))))
            .clone()
    }

    fn backoff(&self, profile: &ProviderProfile, failures: u32, rng: &mut ChaCha8Rng) -> Duration {
        let exp = profile.backoff_base.saturating_mul(1u32 << failures.saturating_sub(1).min(16));
        let capped = exp.min(profile.backoff_max);
        // Half fixed, half jittered.
        let half = capped / 2;
        half + Duration::from_nanos(rng.gen_range(0..=half.as_nanos() as u64))
    }

    /// Sends the bundle's messages and returns the first reply.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        profile: &ProviderProfile,
        ctx: &ExchangeContext,
        sink: &dyn TranscriptSink,
    ) -> Result<ChatExchange, GatewayError> {
        self.complete_validated(bundle.messages.clone(), profile, ctx, sink, "", |_| Verdict::Accept(()))
            .map(|(exchange, ())| exchange)
    }

    /// Sends `messages`, judging each reply with `judge` until one is accepted
    /// or `max_retries + 1` attempts have been made.
    pub fn complete_validated<T>(
        &self,
        mut messages: Vec<ChatMessage>,
        profile: &ProviderProfile,
        ctx: &ExchangeContext,
        sink: &dyn TranscriptSink,
        reminder: &str,
        mut judge: impl FnMut(&str) -> Verdict<T>,
    ) -> Result<(ChatExchange, T), GatewayError> {
        let limiter = self.limiter(profile);
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ ((ctx.round_index as u64) << 32) ^ ctx.sample_index as u64);
        let max_attempts = profile.max_retries + 1;
        let started = self.clock.now();
        let mut ids = Vec::new();
        let mut transport_failures = 0;
        let mut last_problem = String::new();

        for attempt in 1..=max_attempts {
            let sent_at = limiter.lock().unwrap().acquire(self.clock.as_ref());
            let result = match &profile.backend {
                Backend::Http => provider::send_http(&messages, profile),
                Backend::Mock(mock) => provider::send_mock(mock),
            };
            let finished = self.clock.now();
            let id = ctx.exchange_id(attempt);
            ids.push(id.clone());
            let mut entry = TranscriptEntry {
                exchange_id: id,
                game_id: ctx.game_id.clone(),
                round_index: ctx.round_index,
                sample_index: ctx.sample_index,
                attempt,
                profile: profile.name.clone(),
                model_id: profile.model_id.clone(),
                request: messages.clone(),
                outcome: AttemptOutcome::Ok,
                response_text: None,
                reasoning_text: None,
                error: None,
                prompt_tokens: None,
                completion_tokens: None,
                latency_ms: finished.saturating_sub(sent_at).as_millis() as u64,
                timestamp_ms: sent_at.as_millis() as u64,
            };

            let reply = match result {
                Ok(reply) => reply,
                Err(err) => {
                    let (outcome, detail) = match &err {
                        AttemptError::Protocol(d) => (AttemptOutcome::ProtocolError, d.clone()),
                        AttemptError::Retryable(d) | AttemptError::Fatal(d) => {
                            (AttemptOutcome::TransportError, d.clone())
                        }
                        AttemptError::ScriptExhausted => (AttemptOutcome::TransportError, "mock script exhausted".into()),
                    };
                    entry.outcome = outcome;
                    entry.error = Some(detail.clone());
                    sink.append(entry)?;
                    match err {
                        AttemptError::Protocol(detail) => {
                            return Err(GatewayError::Protocol { profile: profile.name.clone(), detail })
                        }
                        AttemptError::ScriptExhausted => {
                            return Err(GatewayError::ScriptExhausted(profile.name.clone()))
                        }
                        AttemptError::Fatal(_) => {
                            return Err(GatewayError::Transport {
                                profile: profile.name.clone(),
                                attempts: attempt,
                                last: detail,
                            })
                        }
                        AttemptError::Retryable(_) => {
                            last_problem = detail;
                            transport_failures += 1;
                            if attempt < max_attempts {
                                let wait = self.backoff(profile, transport_failures, &mut rng);
                                log::debug!("{}: attempt {attempt} failed, backing off {wait:?}", profile.name);
                                self.clock.sleep(wait);
                            }
                            continue;
                        }
                    }
                }
            };

            entry.response_text = Some(reply.text.clone());
            entry.reasoning_text = reply.reasoning.clone();
            entry.prompt_tokens = reply.prompt_tokens;
            entry.completion_tokens = reply.completion_tokens;
            match judge(&reply.text) {
                Verdict::Accept(value) => {
                    sink.append(entry)?;
                    let exchange = ChatExchange {
                        exchange_ids: ids,
                        request_messages: messages,
                        response_text: reply.text,
                        reasoning_text: reply.reasoning,
                        latency: finished.saturating_sub(started),
                        attempt_count: attempt,
                        timestamp_ms: sent_at.as_millis() as u64,
                    };
                    return Ok((exchange, value));
                }
                Verdict::Retry(why) => {
                    entry.outcome = AttemptOutcome::Rejected;
                    entry.error = Some(why.clone());
                    sink.append(entry)?;
                    last_problem = why;
                }
                Verdict::Remind(why) => {
                    entry.outcome = AttemptOutcome::Rejected;
                    entry.error = Some(why.clone());
                    sink.append(entry)?;
                    last_problem = why;
                    messages.push(ChatMessage::assistant(reply.text));
                    messages.push(ChatMessage::user(reminder));
                }
            }
        }
        Err(GatewayError::Transport { profile: profile.name.clone(), attempts: max_attempts, last: last_problem })
    }
}
