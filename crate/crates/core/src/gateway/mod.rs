//! Chat-completion client shared by every model role.
//!
//! [`Gateway`] adds retries with exponential backoff and bounded-concurrency
//! batching on top of a [`ChatBackend`]. Two backends ship with the crate:
//! [`HttpBackend`] for real endpoints and [`MockBackend`] for offline runs.

mod http;
mod mock;

use std::collections::HashSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::http::{parse_response, request_body, HttpBackend, DEFAULT_SUMMARY_POINTER};
pub use self::mock::{
    CallRecord, MockBackend, MockFailure, MockFallback, MockFixture, MockReply, MockSpec,
};

/// Default decoding limits for trace-producing roles; matches the SFT cutoff.
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 16_384;
pub const DEFAULT_TEMPERATURE: f64 = 0.6;
/// Upper bound on a single backoff sleep.
pub const MAX_BACKOFF: Duration = Duration::from_secs(60);

/// Token counts as reported by the provider.
///
/// `reasoning_tokens` counts hidden reasoning billed as output; it is kept
/// exactly as reported and never estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStats {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_tokens: Option<u64>,
}

impl UsageStats {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
            reasoning_tokens: None,
        }
    }
}

impl Add for UsageStats {
    type Output = UsageStats;

    fn add(self, rhs: Self) -> Self {
        let reasoning_tokens = match (self.reasoning_tokens, rhs.reasoning_tokens) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0) + b.unwrap_or(0)),
        };
        UsageStats {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
            reasoning_tokens,
        }
    }
}

impl AddAssign for UsageStats {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sum for UsageStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(UsageStats::default(), Add::add)
    }
}

impl<'a> Sum<&'a UsageStats> for UsageStats {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

/// Pipeline role an endpoint plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Victim,
    Surrogate,
    Compressor,
    Inversion,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Role::Victim => "victim",
            Role::Surrogate => "surrogate",
            Role::Compressor => "compressor",
            Role::Inversion => "inversion",
        })
    }
}

fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_timeout_secs() -> f64 {
    600.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    8
}
fn default_retry_base_ms() -> u64 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub role: Role,
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// First backoff window; doubles on every retry.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    /// JSON pointers tried in order for a provider reasoning summary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summary_paths: Vec<String>,
}

impl EndpointConfig {
    pub fn new(role: Role, base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            role,
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            retry_base_ms: default_retry_base_ms(),
            summary_paths: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(format!("{} endpoint: {m}", self.role)));
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be finite and non-negative");
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return bad("timeout_secs must be positive");
        }
        if self.model_name.is_empty() {
            return bad("model_name is empty");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Backoff window before retry number `retry` (1-based), before jitter.
    pub fn backoff_window(&self, retry: u32) -> Duration {
        let base = Duration::from_millis(self.retry_base_ms);
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        base.saturating_mul(factor).min(MAX_BACKOFF)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }
}

/// Stable digest of a message list; keys mock fixtures.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    crate::sha256_hex(
        serde_json::to_string(messages)
            .expect("messages serialize")
            .as_bytes(),
    )
}

/// What a backend returns for one successful call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub content: String,
    pub summary: Option<String>,
    pub usage: UsageStats,
}

/// One completed request/response pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub request_messages: Vec<ChatMessage>,
    pub response_content: String,
    pub response_summary: Option<String>,
    pub usage: UsageStats,
    pub attempt_count: u32,
    pub latency: Duration,
}

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited{}", retry_after.map(|d| format!(" (retry after {d:?})")).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
}

impl CallError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            CallError::Timeout | CallError::RateLimited { .. } | CallError::Transient(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("failed after {attempts} attempt(s): {error}")]
    Failed { attempts: u32, error: CallError },
}

/// Transport to a chat-completion endpoint. Implementations must be safe to
/// call from several threads at once.
pub trait ChatBackend: Send + Sync {
    fn send(
        &self,
        cfg: &EndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, CallError>;
}

/// Per-job results of [`Gateway::run_batch`], in job order.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub results: Vec<(String, Result<ChatExchange, GatewayError>)>,
    /// Sum of usage over successful exchanges.
    pub total: UsageStats,
}

impl BatchOutcome {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn is_partial(&self) -> bool {
        self.failures() > 0
    }

    pub fn get(&self, id: &str) -> Option<&Result<ChatExchange, GatewayError>> {
        self.results.iter().find(|(k, _)| k == id).map(|(_, r)| r)
    }
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }

    /// Sends one request, retrying retryable failures up to
    /// `cfg.max_retries` times with full-jitter exponential backoff. A
    /// server-suggested delay on rate limiting replaces the backoff window.
    pub fn complete(
        &self,
        cfg: &EndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, GatewayError> {
        cfg.validate()?;
        if messages.is_empty() {
            return Err(GatewayError::Config("message list is empty".into()));
        }
        let start = Instant::now();
        let mut jitter = ChaCha8Rng::seed_from_u64(jitter_seed(messages));
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.send(cfg, messages) {
                Ok(resp) => {
                    return Ok(ChatExchange {
                        request_messages: messages.to_vec(),
                        response_content: resp.content,
                        response_summary: resp.summary,
                        usage: resp.usage,
                        attempt_count: attempt,
                        latency: start.elapsed(),
                    })
                }
                Err(error) if error.is_retryable() && attempt <= cfg.max_retries => {
                    let delay = match error {
                        CallError::RateLimited {
                            retry_after: Some(d),
                        } => d.min(MAX_BACKOFF),
                        _ => {
                            let window = cfg.backoff_window(attempt);
                            window.mul_f64(jitter.gen_range(0.0..=1.0))
                        }
                    };
                    log::warn!(
                        "{} call attempt {attempt} failed ({error}); retrying in {delay:?}",
                        cfg.role
                    );
                    std::thread::sleep(delay);
                }
                Err(error) => {
                    return Err(GatewayError::Failed {
                        attempts: attempt,
                        error,
                    })
                }
            }
        }
    }

    /// Runs every job with at most `cfg.max_in_flight` requests outstanding.
    ///
    /// Per-job failures are collected, never fatal. Configuration problems
    /// (invalid endpoint, no jobs, duplicate ids, empty message lists) abort
    /// before any request is sent.
    pub fn run_batch(
        &self,
        cfg: &EndpointConfig,
        jobs: &[(String, Vec<ChatMessage>)],
    ) -> Result<BatchOutcome, GatewayError> {
        cfg.validate()?;
        if jobs.is_empty() {
            return Err(GatewayError::Config("batch has no jobs".into()));
        }
        let mut seen = HashSet::new();
        for (id, messages) in jobs {
            if !seen.insert(id.as_str()) {
                return Err(GatewayError::Config(format!("duplicate job id {id:?}")));
            }
            if messages.is_empty() {
                return Err(GatewayError::Config(format!("job {id:?} has no messages")));
            }
        }

        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ChatExchange, GatewayError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        let workers = cfg.max_in_flight.min(jobs.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((_, messages)) = jobs.get(i) else {
                        break;
                    };
                    let outcome = self.complete(cfg, messages);
                    slots.lock().expect("slot lock poisoned")[i] = Some(outcome);
                });
            }
        });

        let slots = slots.into_inner().expect("slot lock poisoned");
        let results: Vec<_> = jobs
            .iter()
            .zip(slots)
            .map(|((id, _), slot)| (id.clone(), slot.expect("every job ran")))
            .collect();
        let total = results
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().map(|x| x.usage))
            .sum();
        Ok(BatchOutcome { results, total })
    }
}

fn jitter_seed(messages: &[ChatMessage]) -> u64 {
    let digest = prompt_digest(messages);
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn cfg() -> EndpointConfig {
        let mut c = EndpointConfig::new(Role::Victim, "mock:", "m");
        c.retry_base_ms = 1;
        c
    }

    #[test]
    fn usage_addition() {
        let a = UsageStats::new(1, 2);
        let b = UsageStats {
            prompt_tokens: 3,
            completion_tokens: 4,
            reasoning_tokens: Some(5),
        };
        assert_eq!(
            a + b,
            UsageStats {
                prompt_tokens: 4,
                completion_tokens: 6,
                reasoning_tokens: Some(5)
            }
        );
        assert_eq!([a, a].iter().sum::<UsageStats>(), UsageStats::new(2, 4));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.max_in_flight = 0;
        assert!(matches!(c.validate(), Err(GatewayError::Config(_))));
        let mut c = cfg();
        c.temperature = f64::NAN;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut c = cfg();
        c.retry_base_ms = 1_000;
        assert_eq!(c.backoff_window(1), Duration::from_secs(1));
        assert_eq!(c.backoff_window(3), Duration::from_secs(4));
        assert_eq!(c.backoff_window(40), MAX_BACKOFF);
    }

    struct Flaky {
        failures: u32,
        error: CallError,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn send(
            &self,
            _: &EndpointConfig,
            _: &[ChatMessage],
        ) -> Result<BackendResponse, CallError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(BackendResponse {
                    content: "ok".into(),
                    summary: None,
                    usage: UsageStats::new(1, 1),
                })
            }
        }
    }

    fn flaky(failures: u32, error: CallError) -> (Gateway, Arc<Flaky>) {
        let backend = Arc::new(Flaky {
            failures,
            error,
            calls: AtomicU32::new(0),
        });
        (Gateway::new(backend.clone()), backend)
    }

    #[test]
    fn retries_until_success() {
        let (gw, _) = flaky(2, CallError::Timeout);
        let ex = gw.complete(&cfg(), &[ChatMessage::user("x")]).unwrap();
        assert_eq!(ex.attempt_count, 3);
        assert_eq!(ex.response_content, "ok");
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (gw, backend) = flaky(
            10,
            CallError::RateLimited {
                retry_after: Some(Duration::from_millis(1)),
            },
        );
        let err = gw.complete(&cfg(), &[ChatMessage::user("x")]).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::Failed {
                attempts: 4,
                error: CallError::RateLimited { .. }
            }
        ));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn terminal_errors_do_not_retry() {
        for error in [
            CallError::Auth("bad key".into()),
            CallError::Malformed("{".into()),
        ] {
            let (gw, backend) = flaky(1, error);
            let err = gw.complete(&cfg(), &[ChatMessage::user("x")]).unwrap_err();
            assert!(matches!(err, GatewayError::Failed { attempts: 1, .. }));
            assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        }
    }

    #[test]
    fn empty_messages_rejected() {
        let (gw, _) = flaky(0, CallError::Timeout);
        assert!(matches!(
            gw.complete(&cfg(), &[]),
            Err(GatewayError::Config(_))
        ));
    }

    #[test]
    fn batch_config_errors_abort_before_calls() {
        let (gw, backend) = flaky(0, CallError::Timeout);
        let dup = vec![
            ("a".to_owned(), vec![ChatMessage::user("x")]),
            ("a".to_owned(), vec![ChatMessage::user("y")]),
        ];
        assert!(matches!(
            gw.run_batch(&cfg(), &dup),
            Err(GatewayError::Config(_))
        ));
        assert!(matches!(
            gw.run_batch(&cfg(), &[]),
            Err(GatewayError::Config(_))
        ));
        let mut bad = cfg();
        bad.max_in_flight = 0;
        assert!(gw.run_batch(&bad, &dup[..1]).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }
}
