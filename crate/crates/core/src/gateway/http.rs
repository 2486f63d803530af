use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendResponse, CallError, ChatBackend, ChatMessage, EndpointConfig, UsageStats};

/// Where a provider-exposed reasoning summary is looked up by default.
pub const DEFAULT_SUMMARY_POINTER: &str = "/choices/0/message/reasoning_summary";

/// Blocking client for the chat-completion JSON protocol
/// (`POST {base_url}/chat/completions`).
#[derive(Debug, Clone)]
pub struct HttpBackend {
    agent: ureq::Agent,
}

impl Default for HttpBackend {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl HttpBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn request_body(cfg: &EndpointConfig, messages: &[ChatMessage]) -> Value {
    json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    })
}

/// Extracts content, summary and usage from a response document.
pub fn parse_response(doc: &Value, summary_paths: &[String]) -> Result<BackendResponse, CallError> {
    let message = doc
        .pointer("/choices/0/message")
        .ok_or_else(|| CallError::Malformed("missing choices[0].message".into()))?;
    let content = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => {
            return Err(CallError::Malformed(format!(
                "content is not a string: {other}"
            )))
        }
    };
    let default_paths = [DEFAULT_SUMMARY_POINTER.to_owned()];
    let paths = if summary_paths.is_empty() {
        &default_paths[..]
    } else {
        summary_paths
    };
    let summary = paths
        .iter()
        .filter_map(|p| doc.pointer(p).and_then(Value::as_str))
        .find(|s| !s.trim().is_empty())
        .map(str::to_owned);

    let count = |p: &str| -> Result<Option<u64>, CallError> {
        match doc.pointer(p) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| CallError::Malformed(format!("{p} is not a token count: {v}"))),
        }
    };
    let prompt_tokens = count("/usage/prompt_tokens")?;
    let completion_tokens = count("/usage/completion_tokens")?;
    if prompt_tokens.is_none() || completion_tokens.is_none() {
        log::warn!("response carries no usage block; recording zero tokens");
    }
    let usage = UsageStats {
        prompt_tokens: prompt_tokens.unwrap_or(0),
        completion_tokens: completion_tokens.unwrap_or(0),
        reasoning_tokens: count("/usage/completion_tokens_details/reasoning_tokens")?,
    };
    Ok(BackendResponse {
        content,
        summary,
        usage,
    })
}

fn retry_after(value: Option<&ureq::http::HeaderValue>) -> Option<Duration> {
    let secs: f64 = value?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

impl ChatBackend for HttpBackend {
    fn send(
        &self,
        cfg: &EndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, CallError> {
        let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        let mut request = self
            .agent
            .post(&url)
            .config()
            .timeout_global(Some(cfg.timeout()))
            .build()
            .header("Content-Type", "application/json");
        if let Some(var) = &cfg.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| CallError::Auth(format!("environment variable {var} is not set")))?;
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let body =
            serde_json::to_vec(&request_body(cfg, messages)).expect("request body serializes");
        let mut response = request.send(&body[..]).map_err(|e| match e {
            ureq::Error::Timeout(_) => CallError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => CallError::Timeout,
            ureq::Error::BadUri(u) => CallError::Rejected {
                status: 0,
                body: format!("bad url {u}"),
            },
            other => CallError::Transient(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let retry_hint = retry_after(response.headers().get("retry-after"));
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| CallError::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => {
                let doc: Value = serde_json::from_str(&text)
                    .map_err(|e| CallError::Malformed(format!("invalid JSON: {e}")))?;
                parse_response(&doc, &cfg.summary_paths)
            }
            401 | 403 => Err(CallError::Auth(format!("status {status}"))),
            408 => Err(CallError::Timeout),
            429 => Err(CallError::RateLimited {
                retry_after: retry_hint,
            }),
            500..=599 => Err(CallError::Transient(format!("status {status}"))),
            _ => Err(CallError::Rejected {
                status,
                body: text.chars().take(500).collect(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Role;

    #[test]
    fn body_shape() {
        let mut cfg = EndpointConfig::new(Role::Surrogate, "http://x", "r1");
        cfg.max_output_tokens = 100;
        let body = request_body(&cfg, &[ChatMessage::user("hi")]);
        assert_eq!(
            body,
            json!({"model": "r1", "messages": [{"role": "user", "content": "hi"}], "temperature": 0.6, "max_tokens": 100})
        );
    }

    #[test]
    fn parses_usage_and_summary() {
        let doc = json!({
            "choices": [{"message": {"role": "assistant", "content": "42", "reasoning_summary": "1. add"}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 25, "completion_tokens_details": {"reasoning_tokens": 20}}
        });
        let r = parse_response(&doc, &[]).unwrap();
        assert_eq!(r.content, "42");
        assert_eq!(r.summary.as_deref(), Some("1. add"));
        assert_eq!(
            r.usage,
            UsageStats {
                prompt_tokens: 10,
                completion_tokens: 25,
                reasoning_tokens: Some(20)
            }
        );
    }

    #[test]
    fn custom_summary_path() {
        let doc = json!({"choices": [{"message": {"content": "y", "reasoning": {"summary": "s"}}}], "usage": {"prompt_tokens": 1, "completion_tokens": 1}});
        let r = parse_response(&doc, &["/choices/0/message/reasoning/summary".to_owned()]).unwrap();
        assert_eq!(r.summary.as_deref(), Some("s"));
        assert_eq!(parse_response(&doc, &[]).unwrap().summary, None);
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(
            parse_response(&json!({"choices": []}), &[]),
            Err(CallError::Malformed(_))
        ));
        let bad_usage =
            json!({"choices": [{"message": {"content": "x"}}], "usage": {"prompt_tokens": "ten"}});
        assert!(matches!(
            parse_response(&bad_usage, &[]),
            Err(CallError::Malformed(_))
        ));
    }
}
