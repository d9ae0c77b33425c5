use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, GenerationParams, QARequest, QAResponse};
use crate::prompts::{Bindings, PromptId};

pub const TRANSCRIPT_FILE: &str = "transcripts.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    Record,
    Replay,
    Off,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("replay requested but {0} does not exist")]
    MissingTranscript(PathBuf),
    #[error("{path}:{line}: undecodable transcript record: {reason}")]
    CorruptTranscript {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("transcript store is not in record mode")]
    NotRecording,
    #[error("transcript I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// One line of `transcripts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_key: String,
    pub prompt_id: PromptId,
    pub bindings: Bindings,
    pub document_hash: String,
    pub params: GenerationParams,
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    /// RFC 3339.
    pub timestamp: String,
    #[serde(default)]
    pub backend_id: String,
}

/// Append-only record of backend calls, or a read-only index of one.
pub struct TranscriptStore {
    path: PathBuf,
    mode: TranscriptMode,
    writer: Mutex<Option<File>>,
    records: Vec<TranscriptRecord>,
    index: HashMap<String, Vec<usize>>,
    cursors: Mutex<HashMap<String, usize>>,
    appended: Mutex<usize>,
}

pub fn open_transcript_store(
    run_dir: &Path,
    mode: TranscriptMode,
) -> Result<TranscriptStore, TranscriptError> {
    let path = run_dir.join(TRANSCRIPT_FILE);
    let io_err = |source| TranscriptError::Io {
        path: path.clone(),
        source,
    };
    let mut store = TranscriptStore {
        path: path.clone(),
        mode,
        writer: Mutex::new(None),
        records: Vec::new(),
        index: HashMap::new(),
        cursors: Mutex::new(HashMap::new()),
        appended: Mutex::new(0),
    };
    match mode {
        TranscriptMode::Off => {}
        TranscriptMode::Record => {
            fs::create_dir_all(run_dir).map_err(io_err)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err)?;
            *store.writer.get_mut().expect("fresh mutex") = Some(file);
        }
        TranscriptMode::Replay => {
            let file = match File::open(&path) {
                Ok(f) => f,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    return Err(TranscriptError::MissingTranscript(path));
                }
                Err(e) => return Err(io_err(e)),
            };
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: TranscriptRecord = serde_json::from_str(&line).map_err(|e| {
                    TranscriptError::CorruptTranscript {
                        path: path.clone(),
                        line: i + 1,
                        reason: e.to_string(),
                    }
                })?;
                store
                    .index
                    .entry(record.request_key.clone())
                    .or_default()
                    .push(store.records.len());
                store.records.push(record);
            }
        }
    }
    Ok(store)
}

impl TranscriptStore {
    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Loaded records in replay mode; records appended in record mode.
    pub fn len(&self) -> usize {
        match self.mode {
            TranscriptMode::Replay => self.records.len(),
            _ => *self.appended.lock().expect("transcript counter poisoned"),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn append(
        &self,
        request: &QARequest,
        response: &QAResponse,
    ) -> Result<(), TranscriptError> {
        let record = TranscriptRecord {
            request_key: request.request_key(),
            prompt_id: request.prompt_id,
            bindings: request.bindings.clone(),
            document_hash: request.document.content_hash.clone(),
            params: request.params.clone(),
            raw_text: response.raw_text.clone(),
            latency_ms: response.latency.as_millis() as u64,
            attempts: response.attempt_count,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            backend_id: response.backend_id.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        let mut writer = self.writer.lock().expect("transcript writer poisoned");
        let file = writer.as_mut().ok_or(TranscriptError::NotRecording)?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| TranscriptError::Io {
                path: self.path.clone(),
                source,
            })?;
        *self.appended.lock().expect("transcript counter poisoned") += 1;
        Ok(())
    }

    /// The next unconsumed response recorded for `key`. Repeated requests
    /// with the same key walk through the recorded responses in order.
    pub fn next_response(&self, key: &str) -> Option<&TranscriptRecord> {
        let positions = self.index.get(key)?;
        let mut cursors = self.cursors.lock().expect("replay cursor poisoned");
        let cursor = cursors.entry(key.to_string()).or_insert(0);
        let record = positions.get(*cursor).map(|&i| &self.records[i])?;
        *cursor += 1;
        Some(record)
    }
}

/// Serves responses from a transcript store in replay mode. Makes no
/// network calls.
pub struct ReplayBackend {
    store: std::sync::Arc<TranscriptStore>,
    id: String,
}

impl ReplayBackend {
    pub fn new(store: std::sync::Arc<TranscriptStore>) -> Self {
        let id = store
            .records()
            .iter()
            .map(|r| r.backend_id.as_str())
            .find(|id| !id.is_empty())
            .unwrap_or("replay")
            .to_string();
        ReplayBackend { store, id }
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn send(&self, request: &QARequest) -> Result<String, BackendError> {
        let key = request.request_key();
        self.store
            .next_response(&key)
            .map(|r| r.raw_text.clone())
            .ok_or(BackendError::ReplayMiss(key))
    }
}
