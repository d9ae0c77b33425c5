use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::prompts::{Bindings, PromptId};
use crate::recovery::RepairTag;
use crate::schema::ValidationIssue;

pub const STATE_FILE: &str = "state.json";
pub const DOCUMENT_FILE: &str = "document.txt";
pub const FRAGMENTS_DIR: &str = "fragments";
pub const SPEC_FILE: &str = "spec.abmspec.json";
pub const ISSUES_FILE: &str = "issues.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationStatus {
    Pending,
    Succeeded,
    Failed,
    Skipped,
}

/// One planned prompt call and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageInvocation {
    pub prompt_id: PromptId,
    pub bindings: Bindings,
    pub status: InvocationStatus,
    pub attempts: u32,
    /// Path of the stored fragment, relative to the run directory.
    pub fragment_ref: Option<String>,
    pub issues: Vec<ValidationIssue>,
    /// Repairs needed to recover the accepted output.
    #[serde(default)]
    pub repairs: Vec<RepairTag>,
    /// Why the invocation failed or was skipped.
    #[serde(default)]
    pub error: Option<String>,
}

impl StageInvocation {
    pub fn pending(prompt_id: PromptId, bindings: Bindings) -> Self {
        StageInvocation {
            prompt_id,
            bindings,
            status: InvocationStatus::Pending,
            attempts: 0,
            fragment_ref: None,
            issues: Vec::new(),
            repairs: Vec::new(),
            error: None,
        }
    }

    pub fn skipped(prompt_id: PromptId, bindings: Bindings, reason: String) -> Self {
        StageInvocation {
            status: InvocationStatus::Skipped,
            error: Some(reason),
            ..StageInvocation::pending(prompt_id, bindings)
        }
    }

    pub fn key(&self) -> (PromptId, &Bindings) {
        (self.prompt_id, &self.bindings)
    }

    /// `P4(Wolves, energy)`, `P1`.
    pub fn label(&self) -> String {
        invocation_label(self.prompt_id, &self.bindings)
    }
}

pub fn invocation_label(prompt_id: PromptId, bindings: &Bindings) -> String {
    if bindings.is_empty() {
        prompt_id.to_string()
    } else {
        let values: Vec<&str> = bindings.values().map(String::as_str).collect();
        format!("{prompt_id}({})", values.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    StaticStages,
    FanoutStages,
    Merging,
    Done,
}

/// Everything needed to audit or resume a run. Persisted as `state.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub document_hash: String,
    /// RFC 3339; also the provenance timestamp of the specification.
    pub started_at: String,
    pub backend_id: String,
    pub tool_version: String,
    pub config_snapshot: Config,
    pub phase: RunPhase,
    /// Sorted by prompt id, then bindings.
    pub invocations: Vec<StageInvocation>,
}

impl RunState {
    pub fn count(&self, status: InvocationStatus) -> usize {
        self.invocations
            .iter()
            .filter(|i| i.status == status)
            .count()
    }

    pub fn find(&self, prompt_id: PromptId, bindings: &Bindings) -> Option<&StageInvocation> {
        self.position(prompt_id, bindings)
            .ok()
            .map(|i| &self.invocations[i])
    }

    pub(crate) fn position(
        &self,
        prompt_id: PromptId,
        bindings: &Bindings,
    ) -> Result<usize, usize> {
        self.invocations
            .binary_search_by(|inv| inv.key().cmp(&(prompt_id, bindings)))
    }

    /// Inserts keeping the sort order. Returns false if the key exists.
    pub(crate) fn insert(&mut self, invocation: StageInvocation) -> bool {
        match self.position(invocation.prompt_id, &invocation.bindings) {
            Ok(_) => false,
            Err(at) => {
                self.invocations.insert(at, invocation);
                true
            }
        }
    }

    pub fn to_json(&self) -> String {
        crate::canonical::to_canonical_json(self)
    }

    pub fn load(run_dir: &Path) -> Result<RunState, String> {
        let path = run_dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut state: RunState =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        state.invocations.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(state)
    }
}

/// Lowercase, ASCII alphanumerics kept, everything else `-`, binding values
/// joined by `__`.
pub fn binding_slug(bindings: &Bindings) -> String {
    let parts: Vec<String> = bindings
        .values()
        .map(|v| {
            v.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() {
                        c.to_ascii_lowercase()
                    } else {
                        '-'
                    }
                })
                .collect()
        })
        .collect();
    parts.join("__")
}

pub fn fragment_file_name(prompt_id: PromptId, bindings: &Bindings) -> String {
    format!("{prompt_id}__{}.json", binding_slug(bindings))
}

/// Writes via a sibling temporary file and a rename, so readers never see
/// a half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}
