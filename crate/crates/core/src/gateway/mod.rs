//! Sending (instruction, prompt, document) triples to a QA backend.
//!
//! A [`Gateway`] wraps one [`Backend`] with retry accounting and optional
//! transcript recording. Replaying a recorded run is just another backend,
//! [`ReplayBackend`], reading from a [`TranscriptStore`].

#[cfg(feature = "http")]
mod http;
mod scripted;
mod transcript;

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::document::Document;
use crate::prompts::{Bindings, PromptId};

#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use scripted::{ScriptEntry, ScriptFile, ScriptedBackend};
pub use transcript::{
    open_transcript_store, ReplayBackend, TranscriptError, TranscriptMode, TranscriptRecord,
    TranscriptStore, TRANSCRIPT_FILE,
};

pub const DOCUMENT_START: &str = "--- DOCUMENT START ---";
pub const DOCUMENT_END: &str = "--- DOCUMENT END ---";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_output_tokens: 4096,
            model_name: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QARequest {
    pub prompt_id: PromptId,
    pub bindings: Bindings,
    pub instruction: String,
    pub prompt: String,
    pub document: Arc<Document>,
    pub params: GenerationParams,
}

impl QARequest {
    /// Digest of (prompt id, bindings, document hash, params).
    pub fn request_key(&self) -> String {
        request_key(
            self.prompt_id,
            &self.bindings,
            &self.document.content_hash,
            &self.params,
        )
    }

    /// The user turn: the delimited document followed by the rendered prompt.
    pub fn user_message(&self) -> String {
        format!(
            "{DOCUMENT_START}\n{}\n{DOCUMENT_END}\n\n{}",
            self.document.text, self.prompt
        )
    }
}

pub fn request_key(
    prompt_id: PromptId,
    bindings: &Bindings,
    document_hash: &str,
    params: &GenerationParams,
) -> String {
    let material = serde_json::json!({
        "prompt_id": prompt_id,
        "bindings": bindings,
        "document_hash": document_hash,
        "params": params,
    });
    let text = crate::canonical::to_canonical_string(&material);
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAResponse {
    pub raw_text: String,
    pub latency: Duration,
    pub attempt_count: u32,
    pub backend_id: String,
}

/// Failure of a single backend call.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend refused the request: {0}")]
    Refusal(String),
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("{error} (after {attempts} attempt(s))")]
    Backend { error: BackendError, attempts: u32 },
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

impl GatewayError {
    /// Network-class failure, as opposed to a refusal or a local error.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            GatewayError::Backend {
                error: BackendError::Transport(_) | BackendError::RateLimited { .. },
                ..
            }
        )
    }
}

/// One attempt against a QA service.
pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn send(&self, request: &QARequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Delay after a rate-limit response that names none.
    pub rate_limit_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            rate_limit_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            rate_limit_delay: Duration::ZERO,
        }
    }

    /// Delay before attempt `attempt + 1`, after `attempt` failures.
    pub fn delay(&self, attempt: u32, error: &BackendError) -> Duration {
        let delay = match error {
            BackendError::RateLimited { retry_after } => {
                retry_after.unwrap_or(self.rate_limit_delay)
            }
            _ => self.base_delay.saturating_mul(
                1u32.checked_shl(attempt.saturating_sub(1))
                    .unwrap_or(u32::MAX),
            ),
        };
        delay.min(self.max_delay.max(self.rate_limit_delay))
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    policy: RetryPolicy,
    recorder: Option<Arc<TranscriptStore>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, policy: RetryPolicy) -> Self {
        Gateway {
            backend,
            policy,
            recorder: None,
        }
    }

    /// Records every successful call into `store`, which must be in record mode.
    pub fn with_recorder(mut self, store: Arc<TranscriptStore>) -> Self {
        self.recorder = Some(store);
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn complete(&self, request: &QARequest) -> Result<QAResponse, GatewayError> {
        if request.document.text.is_empty() {
            return Err(GatewayError::EmptyDocument);
        }
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.backend.send(request) {
                Ok(raw_text) => {
                    let response = QAResponse {
                        raw_text,
                        latency: started.elapsed(),
                        attempt_count: attempts,
                        backend_id: self.backend.id(),
                    };
                    if let Some(store) = &self.recorder {
                        store.append(request, &response)?;
                    }
                    return Ok(response);
                }
                Err(error) if error.is_retryable() && attempts <= self.policy.max_retries => {
                    let delay = self.policy.delay(attempts, &error);
                    log::warn!(
                        "{} {:?}: {error}; retrying in {delay:?}",
                        request.prompt_id,
                        request.bindings
                    );
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                Err(error) => return Err(GatewayError::Backend { error, attempts }),
            }
        }
    }
}
