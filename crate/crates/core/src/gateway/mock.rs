use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    prompt_digest, BackendResponse, CallError, ChatBackend, ChatMessage, EndpointConfig,
    MessageRole, UsageStats,
};
use crate::metrics::token_len;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockReply {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default)]
    pub usage: UsageStats,
}

/// Scripted failure returned before a fixture starts answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Timeout,
    RateLimit,
    Transient,
    Auth,
    Malformed,
}

impl MockFailure {
    fn to_error(self) -> CallError {
        match self {
            MockFailure::Timeout => CallError::Timeout,
            MockFailure::RateLimit => CallError::RateLimited { retry_after: None },
            MockFailure::Transient => CallError::Transient("scripted failure".into()),
            MockFailure::Auth => CallError::Auth("scripted failure".into()),
            MockFailure::Malformed => CallError::Malformed("scripted failure".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MockFixture {
    pub reply: Option<MockReply>,
    pub latency: Duration,
    /// Returned on the first calls for this prompt, in order.
    pub failures: Vec<MockFailure>,
}

/// What the mock does with a prompt that has no fixture.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFallback {
    #[default]
    Error,
    /// Reply with the last user message; usage counts tokens of the exchange.
    Echo,
    /// Reply with the same canned response to everything.
    Fixed(MockReply),
}

/// Config-file description of a mock endpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockSpec {
    #[serde(default)]
    pub fallback: MockFallback,
    /// JSONL fixture file; see [`MockBackend::load_fixtures`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub seq: usize,
    pub digest: String,
    /// Requests outstanding when this one entered, itself included.
    pub in_flight: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    messages: Option<Vec<ChatMessage>>,
    #[serde(default)]
    digest: Option<String>,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    summary: Option<String>,
    #[serde(default)]
    usage: UsageStats,
    #[serde(default)]
    latency_ms: u64,
    #[serde(default)]
    fail: Vec<MockFailure>,
}

/// Deterministic in-process backend keyed by [`prompt_digest`].
///
/// Identical requests get identical replies. Every call is logged together
/// with the number of requests in flight, so tests can check concurrency
/// bounds.
#[derive(Debug, Default)]
pub struct MockBackend {
    fixtures: HashMap<String, MockFixture>,
    fallback: MockFallback,
    default_latency: Duration,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    log: Mutex<MockLog>,
}

#[derive(Debug, Default)]
struct MockLog {
    calls: Vec<CallRecord>,
    attempts: HashMap<String, usize>,
}

impl MockBackend {
    pub fn new(fallback: MockFallback) -> Self {
        Self {
            fallback,
            ..Self::default()
        }
    }

    pub fn from_spec(spec: &MockSpec, base_dir: &Path) -> Result<Self, String> {
        let mut mock =
            Self::new(spec.fallback.clone()).with_latency(Duration::from_millis(spec.latency_ms));
        if let Some(path) = &spec.fixtures {
            mock.load_fixtures(&base_dir.join(path))?;
        }
        Ok(mock)
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.default_latency = latency;
        self
    }

    pub fn insert(&mut self, messages: &[ChatMessage], fixture: MockFixture) {
        self.fixtures.insert(prompt_digest(messages), fixture);
    }

    /// Registers a reply for a single-user-message prompt.
    pub fn with_prompt(mut self, prompt: &str, reply: MockReply) -> Self {
        self.insert(
            &[ChatMessage::user(prompt)],
            MockFixture {
                reply: Some(reply),
                ..MockFixture::default()
            },
        );
        self
    }

    pub fn fixture_mut(&mut self, messages: &[ChatMessage]) -> &mut MockFixture {
        self.fixtures.entry(prompt_digest(messages)).or_default()
    }

    /// Loads JSONL fixtures. Each line names its prompt by `prompt` (a single
    /// user message), `messages` or a precomputed `digest`, and gives
    /// `content`, optional `summary`, `usage`, `latency_ms` and a `fail` list.
    pub fn load_fixtures(&mut self, path: &Path) -> Result<usize, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut loaded = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: FixtureLine = serde_json::from_str(line)
                .map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
            let digest = match (f.prompt, f.messages, f.digest) {
                (Some(p), None, None) => prompt_digest(&[ChatMessage::user(p)]),
                (None, Some(m), None) => prompt_digest(&m),
                (None, None, Some(d)) => d,
                _ => {
                    return Err(format!(
                        "{}:{}: give exactly one of prompt, messages, digest",
                        path.display(),
                        i + 1
                    ))
                }
            };
            let reply = f.content.map(|content| MockReply {
                content,
                summary: f.summary,
                usage: f.usage,
            });
            self.fixtures.insert(
                digest,
                MockFixture {
                    reply,
                    latency: Duration::from_millis(f.latency_ms),
                    failures: f.fail,
                },
            );
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("mock log poisoned").calls.clone()
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("mock log poisoned").calls.len()
    }

    /// Largest number of simultaneously outstanding requests seen so far.
    pub fn high_water_mark(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }

    fn respond(
        &self,
        digest: &str,
        attempt: usize,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, CallError> {
        let fixture = self.fixtures.get(digest);
        if let Some(failure) = fixture.and_then(|f| f.failures.get(attempt)) {
            return Err(failure.to_error());
        }
        let reply = match (fixture.and_then(|f| f.reply.as_ref()), &self.fallback) {
            (Some(reply), _) => reply.clone(),
            (None, MockFallback::Fixed(reply)) => reply.clone(),
            (None, MockFallback::Echo) => {
                let content = messages
                    .iter()
                    .rev()
                    .find(|m| m.role == MessageRole::User)
                    .map(|m| m.content.clone())
                    .unwrap_or_default();
                let prompt_tokens = messages.iter().map(|m| token_len(&m.content) as u64).sum();
                let usage = UsageStats::new(prompt_tokens, token_len(&content) as u64);
                MockReply {
                    content,
                    summary: None,
                    usage,
                }
            }
            (None, MockFallback::Error) => {
                return Err(CallError::Rejected {
                    status: 404,
                    body: format!("no mock fixture for prompt {digest}"),
                })
            }
        };
        Ok(BackendResponse {
            content: reply.content,
            summary: reply.summary,
            usage: reply.usage,
        })
    }
}

impl ChatBackend for MockBackend {
    fn send(
        &self,
        _cfg: &EndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, CallError> {
        let digest = prompt_digest(messages);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(now, Ordering::SeqCst);
        let attempt = {
            let mut log = self.log.lock().expect("mock log poisoned");
            let seq = log.calls.len();
            log.calls.push(CallRecord {
                seq,
                digest: digest.clone(),
                in_flight: now,
            });
            let n = log.attempts.entry(digest.clone()).or_insert(0);
            *n += 1;
            *n - 1
        };
        let latency = self
            .fixtures
            .get(&digest)
            .map(|f| f.latency)
            .filter(|d| !d.is_zero())
            .unwrap_or(self.default_latency);
        if !latency.is_zero() {
            std::thread::sleep(latency);
        }
        let result = self.respond(&digest, attempt, messages);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayError, Role};
    use std::sync::Arc;

    fn cfg() -> EndpointConfig {
        let mut c = EndpointConfig::new(Role::Victim, "mock:", "m");
        c.retry_base_ms = 1;
        c
    }

    #[test]
    fn fixture_echo() {
        let mock = MockBackend::new(MockFallback::Error).with_prompt(
            "2+2?",
            MockReply {
                content: "4".into(),
                summary: None,
                usage: UsageStats::new(10, 25),
            },
        );
        let gw = Gateway::new(Arc::new(mock));
        let ex = gw.complete(&cfg(), &[ChatMessage::user("2+2?")]).unwrap();
        assert_eq!(ex.response_content, "4");
        assert_eq!(ex.usage, UsageStats::new(10, 25));
        assert_eq!(ex.attempt_count, 1);
    }

    #[test]
    fn unknown_prompt_fallbacks() {
        let echo = Gateway::new(Arc::new(MockBackend::new(MockFallback::Echo)));
        let msgs = [
            ChatMessage::system("be brief"),
            ChatMessage::user("hello there"),
        ];
        let ex = echo.complete(&cfg(), &msgs).unwrap();
        assert_eq!(ex.response_content, "hello there");
        assert_eq!(ex.usage, UsageStats::new(4, 2));

        let strict = Gateway::new(Arc::new(MockBackend::new(MockFallback::Error)));
        let err = strict.complete(&cfg(), &msgs).unwrap_err();
        assert!(matches!(err, GatewayError::Failed { attempts: 1, .. }));
    }

    #[test]
    fn identical_requests_identical_replies() {
        let gw = Gateway::new(Arc::new(MockBackend::new(MockFallback::Echo)));
        let m = [ChatMessage::user("same")];
        let a = gw.complete(&cfg(), &m).unwrap();
        let b = gw.complete(&cfg(), &m).unwrap();
        assert_eq!(
            (a.response_content, a.response_summary, a.usage),
            (b.response_content, b.response_summary, b.usage)
        );
    }

    #[test]
    fn scripted_failures_then_success() {
        let mut mock = MockBackend::new(MockFallback::Echo);
        mock.fixture_mut(&[ChatMessage::user("x")]).failures =
            vec![MockFailure::Timeout, MockFailure::RateLimit];
        let mock = Arc::new(mock);
        let gw = Gateway::new(mock.clone());
        let ex = gw.complete(&cfg(), &[ChatMessage::user("x")]).unwrap();
        assert_eq!(ex.attempt_count, 3);
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn fixture_file_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        let digest = prompt_digest(&[ChatMessage::user("d")]);
        fs::write(
            &path,
            format!(
                "{{\"prompt\":\"a\",\"content\":\"A\",\"summary\":\"s\",\"usage\":{{\"prompt_tokens\":1,\"completion_tokens\":2}}}}\n\
                 {{\"messages\":[{{\"role\":\"user\",\"content\":\"b\"}}],\"content\":\"B\"}}\n\
                 {{\"digest\":\"{digest}\",\"content\":\"D\",\"fail\":[\"transient\"]}}\n"
            ),
        )
        .unwrap();
        let mut mock = MockBackend::new(MockFallback::Error);
        assert_eq!(mock.load_fixtures(&path).unwrap(), 3);
        let gw = Gateway::new(Arc::new(mock));
        let a = gw.complete(&cfg(), &[ChatMessage::user("a")]).unwrap();
        assert_eq!(
            (a.response_content.as_str(), a.response_summary.as_deref()),
            ("A", Some("s"))
        );
        assert_eq!(
            gw.complete(&cfg(), &[ChatMessage::user("b")])
                .unwrap()
                .response_content,
            "B"
        );
        let d = gw.complete(&cfg(), &[ChatMessage::user("d")]).unwrap();
        assert_eq!((d.response_content.as_str(), d.attempt_count), ("D", 2));

        fs::write(
            &path,
            "{\"prompt\":\"a\",\"digest\":\"x\",\"content\":\"A\"}\n",
        )
        .unwrap();
        assert!(MockBackend::new(MockFallback::Error)
            .load_fixtures(&path)
            .is_err());
    }
}
