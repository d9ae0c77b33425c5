use std::env;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, QARequest};

/// Chat-completion style HTTP backend: the instruction is the system
/// message, the delimited document plus prompt is the user message.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    credential_env_var: Option<String>,
}

impl HttpBackend {
    pub fn new(
        url: impl Into<String>,
        credential_env_var: Option<String>,
        timeout: Duration,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpBackend {
            agent: ureq::Agent::new_with_config(config),
            url: url.into(),
            credential_env_var,
        }
    }

    pub fn request_body(request: &QARequest) -> Value {
        json!({
            "model": request.params.model_name,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.instruction},
                {"role": "user", "content": request.user_message()},
            ],
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn send(&self, request: &QARequest) -> Result<String, BackendError> {
        let credential = match &self.credential_env_var {
            Some(var) => Some(env::var(var).map_err(|_| {
                BackendError::Auth(format!("credential environment variable {var} is not set"))
            })?),
            None => None,
        };
        let body = Self::request_body(request).to_string();
        let mut builder = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = credential {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = builder
            .send(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_completion(&text),
            401 | 403 => Err(BackendError::Auth(format!("HTTP {status}"))),
            429 => Err(BackendError::RateLimited { retry_after }),
            408 | 500..=599 => Err(BackendError::Transport(format!("HTTP {status}"))),
            _ => Err(BackendError::Refusal(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            ))),
        }
    }
}

fn parse_completion(text: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| BackendError::InvalidResponse(format!("response is not JSON: {e}")))?;
    let choice = value
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::InvalidResponse("response has no choices".into()))?;
    if let Some(refusal) = choice.pointer("/message/refusal").and_then(Value::as_str) {
        return Err(BackendError::Refusal(refusal.to_string()));
    }
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(BackendError::Refusal("content filtered".into()));
    }
    choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::InvalidResponse("choice has no message content".into()))
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
