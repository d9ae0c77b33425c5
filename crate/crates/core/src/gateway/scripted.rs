use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, QARequest, DOCUMENT_END, DOCUMENT_START};
use crate::prompts::{Bindings, PromptId};

/// On-disk form of a scripted backend: canned replies keyed by prompt and
/// bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default = "default_id")]
    pub backend_id: String,
    pub responses: Vec<ScriptEntry>,
}

fn default_id() -> String {
    "scripted".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub prompt_id: PromptId,
    #[serde(default)]
    pub bindings: Bindings,
    /// Replies for successive calls; the last one repeats.
    pub replies: Vec<String>,
}

type Key = (PromptId, Bindings);

/// Deterministic backend answering from a lookup table.
pub struct ScriptedBackend {
    id: String,
    replies: Mutex<HashMap<Key, Vec<String>>>,
    cursors: Mutex<HashMap<Key, usize>>,
    calls: AtomicUsize,
    latency: Option<Duration>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedBackend {
            id: id.into(),
            replies: Mutex::new(HashMap::new()),
            cursors: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
            latency: None,
        }
    }

    pub fn from_script(script: &ScriptFile) -> Self {
        let backend = ScriptedBackend::new(script.backend_id.clone());
        for entry in &script.responses {
            for reply in &entry.replies {
                backend.add(entry.prompt_id, entry.bindings.clone(), reply);
            }
        }
        backend
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(ScriptedBackend::from_script(&script))
    }

    /// Sleeps this long in every call, to stand in for network latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    /// Appends a reply for `(prompt_id, bindings)`.
    pub fn add(&self, prompt_id: PromptId, bindings: Bindings, reply: &str) {
        self.replies
            .lock()
            .expect("script poisoned")
            .entry((prompt_id, bindings))
            .or_default()
            .push(reply.to_string());
    }

    /// Total number of `send` calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn send(&self, request: &QARequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            thread::sleep(latency);
        }
        let user = request.user_message();
        if !user.starts_with(DOCUMENT_START) || !user.contains(DOCUMENT_END) {
            return Err(BackendError::InvalidResponse(
                "request lacks the document block".into(),
            ));
        }
        let key = (request.prompt_id, request.bindings.clone());
        let replies = self.replies.lock().expect("script poisoned");
        let Some(list) = replies.get(&key).filter(|l| !l.is_empty()) else {
            return Err(BackendError::Refusal(format!(
                "no scripted reply for {} {:?}",
                request.prompt_id, request.bindings
            )));
        };
        let mut cursors = self.cursors.lock().expect("script cursor poisoned");
        let cursor = cursors.entry(key).or_insert(0);
        let reply = list[(*cursor).min(list.len() - 1)].clone();
        *cursor += 1;
        Ok(reply)
    }
}
