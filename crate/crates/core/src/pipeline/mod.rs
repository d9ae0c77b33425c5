//! Runs the nine-stage extraction over one document: static stages first,
//! then fan-out children as their parents' fragments arrive, with per-stage
//! retries, persistence after every status change, and resumption.
//!
//! The orchestrator owns the [`RunState`]. Stage workers only see immutable
//! inputs and hand their results back over a channel; with the `parallel`
//! feature they run on a thread pool of `pipeline.parallelism` threads,
//! otherwise one after another on the calling thread.

mod plan;
mod state;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use plan::{plan, STATIC_STAGES};
pub use state::{
    binding_slug, fragment_file_name, invocation_label, write_atomic, InvocationStatus, RunPhase,
    RunState, StageInvocation, DOCUMENT_FILE, FRAGMENTS_DIR, ISSUES_FILE, SPEC_FILE, STATE_FILE,
};

use crate::config::Config;
use crate::document::Document;
use crate::gateway::{Gateway, QARequest};
use crate::prompts::{Bindings, Catalog, PromptId};
use crate::recovery::{recover_stage_output, RepairTag};
use crate::schema::{
    lint, merge, validate_stage_payload, Fragment, MergeError, ModelSpecification, Provenance,
    ValidationIssue,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const TRANSPORT_CODE: &str = "backend_transport";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("strict mode: stage {stage} failed: {reason}")]
    Aborted { stage: String, reason: String },
    #[error("backend unavailable: every static stage failed with a transport error")]
    BackendUnavailable,
    #[error("stored document hash {found} does not match run state {expected}")]
    StaleRun { expected: String, found: String },
    #[error("corrupt run state: {0}")]
    CorruptState(String),
    #[error("run interrupted after {completed} completed invocation(s)")]
    Interrupted { completed: usize },
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("failed to build worker pool: {0}")]
    ThreadPool(String),
    #[error("I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of a run that reached the merge.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: ModelSpecification,
    pub state: RunState,
    /// Stage, merge and lint issues, as written to `issues.json`.
    pub issues: Vec<ValidationIssue>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> usize {
        self.state.count(InvocationStatus::Succeeded)
    }

    pub fn failed(&self) -> usize {
        self.state.count(InvocationStatus::Failed)
    }

    pub fn skipped(&self) -> usize {
        self.state.count(InvocationStatus::Skipped)
    }

    /// Every invocation succeeded.
    pub fn is_complete(&self) -> bool {
        self.failed() == 0 && self.skipped() == 0
    }

    pub fn error_count(&self) -> usize {
        self.issues.iter().filter(|i| i.is_error()).count()
    }

    pub fn warning_count(&self) -> usize {
        self.issues.len() - self.error_count()
    }
}

pub struct Pipeline {
    gateway: Gateway,
    catalog: Catalog,
    config: Config,
    timestamp: Option<String>,
    interrupt_after: Option<usize>,
}

impl Pipeline {
    pub fn new(gateway: Gateway, config: Config) -> Self {
        Pipeline {
            gateway,
            catalog: Catalog::builtin(),
            config,
            timestamp: None,
            interrupt_after: None,
        }
    }

    pub fn with_catalog(mut self, catalog: Catalog) -> Self {
        self.catalog = catalog;
        self
    }

    /// Fixes the run's start time instead of reading the clock.
    pub fn with_timestamp(mut self, timestamp: impl Into<String>) -> Self {
        self.timestamp = Some(timestamp.into());
        self
    }

    /// Stops with [`PipelineError::Interrupted`] once `n` invocations have
    /// completed in this session, as if the process had been killed.
    pub fn interrupt_after(mut self, n: usize) -> Self {
        self.interrupt_after = Some(n);
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Runs every stage for `document`, writing the run directory from
    /// scratch.
    pub fn execute(
        &self,
        document: &Document,
        run_dir: &Path,
    ) -> Result<RunOutcome, PipelineError> {
        if document.is_empty() {
            return Err(PipelineError::EmptyDocument);
        }
        fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let fragments_dir = run_dir.join(FRAGMENTS_DIR);
        if fragments_dir.exists() {
            fs::remove_dir_all(&fragments_dir).map_err(io_err(&fragments_dir))?;
        }
        for name in [SPEC_FILE, ISSUES_FILE] {
            let path = run_dir.join(name);
            if path.exists() {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        fs::create_dir_all(&fragments_dir).map_err(io_err(&fragments_dir))?;
        let doc_path = run_dir.join(DOCUMENT_FILE);
        write_atomic(&doc_path, &document.text).map_err(io_err(&doc_path))?;

        let started_at = self.timestamp.clone().unwrap_or_else(|| {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        });
        let state = RunState {
            document_hash: document.content_hash.clone(),
            started_at,
            backend_id: self.gateway.backend_id(),
            tool_version: TOOL_VERSION.to_string(),
            config_snapshot: self.config.clone(),
            phase: RunPhase::StaticStages,
            invocations: Vec::new(),
        };
        let run = Run::new(
            self,
            run_dir,
            Arc::new(document.clone()),
            state,
            BTreeMap::new(),
        );
        run.persist()?;
        self.finish(run)
    }

    /// Continues the run persisted in `run_dir`. Succeeded invocations are
    /// kept; failed and skipped ones are planned again.
    pub fn resume(&self, run_dir: &Path) -> Result<RunOutcome, PipelineError> {
        let mut state = RunState::load(run_dir).map_err(PipelineError::CorruptState)?;
        let doc_path = run_dir.join(DOCUMENT_FILE);
        let text = fs::read_to_string(&doc_path)
            .map_err(|e| PipelineError::CorruptState(format!("{}: {e}", doc_path.display())))?;
        let document = Document::from_text(&doc_path, &text);
        if document.content_hash != state.document_hash {
            return Err(PipelineError::StaleRun {
                expected: state.document_hash,
                found: document.content_hash,
            });
        }
        if document.is_empty() {
            return Err(PipelineError::EmptyDocument);
        }

        state.invocations.retain(|i| {
            matches!(
                i.status,
                InvocationStatus::Pending | InvocationStatus::Succeeded
            )
        });
        let mut fragments = BTreeMap::new();
        for inv in state
            .invocations
            .iter()
            .filter(|i| i.status == InvocationStatus::Succeeded)
        {
            let fragment = load_fragment(run_dir, inv)?;
            fragments.insert((inv.prompt_id, inv.bindings.clone()), fragment);
        }
        state.config_snapshot = self.config.clone();
        state.backend_id = self.gateway.backend_id();
        state.tool_version = TOOL_VERSION.to_string();
        let fragments_dir = run_dir.join(FRAGMENTS_DIR);
        fs::create_dir_all(&fragments_dir).map_err(io_err(&fragments_dir))?;

        let run = Run::new(self, run_dir, Arc::new(document), state, fragments);
        run.persist()?;
        self.finish(run)
    }

    fn finish(&self, mut run: Run<'_>) -> Result<RunOutcome, PipelineError> {
        self.drive(&mut run)?;

        let statics: Vec<&StageInvocation> = run
            .state
            .invocations
            .iter()
            .filter(|i| STATIC_STAGES.contains(&i.prompt_id))
            .collect();
        if statics.iter().all(|i| {
            i.status == InvocationStatus::Failed
                && i.issues.iter().any(|issue| issue.code == TRANSPORT_CODE)
        }) {
            return Err(PipelineError::BackendUnavailable);
        }

        run.state.phase = RunPhase::Merging;
        run.persist()?;
        let provenance = Provenance {
            document_hash: run.state.document_hash.clone(),
            backend_id: run.state.backend_id.clone(),
            timestamp: run.state.started_at.clone(),
            tool_version: TOOL_VERSION.to_string(),
        };
        let fragments: Vec<Fragment> = run.fragments.values().cloned().collect();
        let (spec, merge_issues) = merge(&fragments, provenance)?;

        let mut issues: Vec<ValidationIssue> = run
            .state
            .invocations
            .iter()
            .flat_map(|i| i.issues.iter().cloned())
            .collect();
        issues.extend(merge_issues);
        issues.extend(lint(&spec));

        let spec_path = run.run_dir.join(SPEC_FILE);
        write_atomic(&spec_path, &spec.to_canonical_json()).map_err(io_err(&spec_path))?;
        let issues_path = run.run_dir.join(ISSUES_FILE);
        write_atomic(&issues_path, &crate::canonical::to_canonical_json(&issues))
            .map_err(io_err(&issues_path))?;

        run.state.phase = RunPhase::Done;
        run.persist()?;
        Ok(RunOutcome {
            spec,
            state: run.state,
            issues,
        })
    }

    #[cfg(feature = "parallel")]
    fn drive(&self, run: &mut Run<'_>) -> Result<(), PipelineError> {
        use std::sync::mpsc;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.pipeline.parallelism.max(1))
            .thread_name(|i| format!("abm-stage-{i}"))
            .build()
            .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
        let (tx, rx) = mpsc::channel::<JobResult>();
        let document = run.document.clone();
        pool.in_place_scope(|scope| {
            let mut in_flight = 0usize;
            loop {
                for job in run.next_jobs()? {
                    let tx = tx.clone();
                    let document = &document;
                    in_flight += 1;
                    scope.spawn(move |_| {
                        let _ = tx.send(self.run_job(document, job));
                    });
                }
                if in_flight == 0 {
                    return Ok(());
                }
                let result = rx.recv().expect("a worker is in flight");
                in_flight -= 1;
                run.complete(result)?;
            }
        })
    }

    #[cfg(not(feature = "parallel"))]
    fn drive(&self, run: &mut Run<'_>) -> Result<(), PipelineError> {
        let document = run.document.clone();
        loop {
            let jobs = run.next_jobs()?;
            if jobs.is_empty() {
                return Ok(());
            }
            for job in jobs {
                let result = self.run_job(&document, job);
                run.complete(result)?;
            }
        }
    }

    /// render → complete → recover → validate, with up to
    /// `max_stage_retries` fresh calls after the first.
    fn run_job(&self, document: &Arc<Document>, job: Job) -> JobResult {
        let label = invocation_label(job.prompt_id, &job.bindings);
        let stage_issue = |issue: ValidationIssue| issue.with_stage(label.clone());
        let prompt = match self.catalog.render(job.prompt_id, &job.bindings) {
            Ok(p) => p,
            Err(e) => {
                return JobResult {
                    job,
                    attempts: 0,
                    outcome: JobOutcome::Failed {
                        issues: vec![stage_issue(ValidationIssue::error(
                            "/",
                            "render_error",
                            e.to_string(),
                        ))],
                        error: e.to_string(),
                    },
                };
            }
        };
        let request = QARequest {
            prompt_id: job.prompt_id,
            bindings: job.bindings.clone(),
            instruction: self.catalog.instruction().text.clone(),
            prompt,
            document: document.clone(),
            params: self.config.generation_params(),
        };

        let max_attempts = 1 + self.config.pipeline.max_stage_retries;
        let mut issues = Vec::new();
        let mut error = String::new();
        for attempt in 1..=max_attempts {
            let (new_issues, new_error) = match self.gateway.complete(&request) {
                Err(e) => {
                    let code = if e.is_transport() {
                        TRANSPORT_CODE
                    } else {
                        "backend_error"
                    };
                    (
                        vec![ValidationIssue::error("/", code, e.to_string())],
                        e.to_string(),
                    )
                }
                Ok(response) => match recover_stage_output(&response.raw_text, job.prompt_id) {
                    Err(e) => (
                        vec![ValidationIssue::error("/", e.code(), e.to_string())],
                        e.to_string(),
                    ),
                    Ok((value, report)) => {
                        let validation =
                            validate_stage_payload(job.prompt_id, &job.bindings, &value);
                        let issues: Vec<_> =
                            validation.issues.into_iter().map(&stage_issue).collect();
                        if let Some(fragment) = validation.fragment {
                            return JobResult {
                                job,
                                attempts: attempt,
                                outcome: JobOutcome::Succeeded {
                                    fragment,
                                    issues,
                                    repairs: report.repairs_applied,
                                },
                            };
                        }
                        let first = issues.iter().find(|i| i.is_error()).map(|i| i.to_string());
                        (issues, first.unwrap_or_else(|| "validation failed".into()))
                    }
                },
            };
            log::debug!("{label}: attempt {attempt}/{max_attempts} failed: {new_error}");
            issues = new_issues
                .into_iter()
                .map(|i| if i.stage.is_some() { i } else { stage_issue(i) })
                .collect();
            error = new_error;
        }
        JobResult {
            job,
            attempts: max_attempts,
            outcome: JobOutcome::Failed { issues, error },
        }
    }
}

fn load_fragment(run_dir: &Path, inv: &StageInvocation) -> Result<Fragment, PipelineError> {
    let corrupt = |msg: String| PipelineError::CorruptState(format!("{}: {msg}", inv.label()));
    let rel = inv
        .fragment_ref
        .as_ref()
        .ok_or_else(|| corrupt("succeeded without a fragment".into()))?;
    let path = run_dir.join(rel);
    let text =
        fs::read_to_string(&path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    let fragment = validate_stage_payload(inv.prompt_id, &inv.bindings, &value)
        .fragment
        .ok_or_else(|| corrupt(format!("{} no longer validates", path.display())))?;
    if fragment.bindings() != inv.bindings {
        return Err(corrupt(format!(
            "{} belongs to another invocation",
            path.display()
        )));
    }
    Ok(fragment)
}

struct Job {
    prompt_id: PromptId,
    bindings: Bindings,
}

struct JobResult {
    job: Job,
    attempts: u32,
    outcome: JobOutcome,
}

enum JobOutcome {
    Succeeded {
        fragment: Fragment,
        issues: Vec<ValidationIssue>,
        repairs: Vec<RepairTag>,
    },
    Failed {
        issues: Vec<ValidationIssue>,
        error: String,
    },
}

/// Orchestrator-side state of one run.
struct Run<'a> {
    pipeline: &'a Pipeline,
    run_dir: &'a Path,
    document: Arc<Document>,
    state: RunState,
    fragments: BTreeMap<(PromptId, Bindings), Fragment>,
    dispatched: std::collections::BTreeSet<(PromptId, Bindings)>,
    completed: usize,
}

impl<'a> Run<'a> {
    fn new(
        pipeline: &'a Pipeline,
        run_dir: &'a Path,
        document: Arc<Document>,
        state: RunState,
        fragments: BTreeMap<(PromptId, Bindings), Fragment>,
    ) -> Self {
        Run {
            pipeline,
            run_dir,
            document,
            state,
            fragments,
            dispatched: Default::default(),
            completed: 0,
        }
    }

    fn persist(&self) -> Result<(), PipelineError> {
        let path = self.run_dir.join(STATE_FILE);
        write_atomic(&path, &self.state.to_json()).map_err(io_err(&path))
    }

    /// Plans what became executable and hands out every pending invocation
    /// not yet dispatched.
    fn next_jobs(&mut self) -> Result<Vec<Job>, PipelineError> {
        let fragments: Vec<Fragment> = self.fragments.values().cloned().collect();
        let planned = plan(&self.state.invocations, &fragments);
        let mut changed = false;
        for inv in planned {
            changed |= self.state.insert(inv);
        }
        let jobs: Vec<Job> = self
            .state
            .invocations
            .iter()
            .filter(|i| i.status == InvocationStatus::Pending)
            .filter(|i| !self.dispatched.contains(&(i.prompt_id, i.bindings.clone())))
            .map(|i| Job {
                prompt_id: i.prompt_id,
                bindings: i.bindings.clone(),
            })
            .collect();
        for job in &jobs {
            self.dispatched
                .insert((job.prompt_id, job.bindings.clone()));
        }
        let phase =
            if self.state.invocations.iter().any(|i| {
                i.status == InvocationStatus::Pending && STATIC_STAGES.contains(&i.prompt_id)
            }) {
                RunPhase::StaticStages
            } else {
                RunPhase::FanoutStages
            };
        if phase != self.state.phase {
            self.state.phase = phase;
            changed = true;
        }
        if changed {
            self.persist()?;
        }
        Ok(jobs)
    }

    fn complete(&mut self, result: JobResult) -> Result<(), PipelineError> {
        let JobResult {
            job,
            attempts,
            outcome,
        } = result;
        let at = self
            .state
            .position(job.prompt_id, &job.bindings)
            .expect("completed job was planned");
        let mut abort = None;
        match outcome {
            JobOutcome::Succeeded {
                fragment,
                issues,
                repairs,
            } => {
                let rel = self.write_fragment(&job, &fragment)?;
                let inv = &mut self.state.invocations[at];
                inv.status = InvocationStatus::Succeeded;
                inv.attempts = attempts;
                inv.fragment_ref = Some(rel);
                inv.issues = issues;
                inv.repairs = repairs;
                inv.error = None;
                self.fragments
                    .insert((job.prompt_id, job.bindings), fragment);
            }
            JobOutcome::Failed { issues, error } => {
                let inv = &mut self.state.invocations[at];
                log::warn!(
                    "{} failed after {attempts} attempt(s): {error}",
                    inv.label()
                );
                inv.status = InvocationStatus::Failed;
                inv.attempts = attempts;
                inv.issues = issues;
                if self.pipeline.config.pipeline.strict {
                    abort = Some(PipelineError::Aborted {
                        stage: inv.label(),
                        reason: error.clone(),
                    });
                }
                inv.error = Some(error);
            }
        }
        self.persist()?;
        self.completed += 1;
        if let Some(e) = abort {
            return Err(e);
        }
        if self.pipeline.interrupt_after == Some(self.completed) {
            return Err(PipelineError::Interrupted {
                completed: self.completed,
            });
        }
        Ok(())
    }

    /// Stores the fragment's canonical payload. A name already taken by a
    /// different invocation gets a short digest suffix.
    fn write_fragment(&self, job: &Job, fragment: &Fragment) -> Result<String, PipelineError> {
        let mut name = fragment_file_name(job.prompt_id, &job.bindings);
        let taken = |candidate: &str| {
            let rel = format!("{FRAGMENTS_DIR}/{candidate}");
            self.state.invocations.iter().any(|i| {
                i.fragment_ref.as_deref() == Some(rel.as_str())
                    && i.key() != (job.prompt_id, &job.bindings)
            })
        };
        if taken(&name) {
            let digest =
                Sha256::digest(crate::canonical::to_canonical_json(&job.bindings).as_bytes());
            let stem = name.trim_end_matches(".json").to_string();
            name = format!("{stem}-{}.json", &hex::encode(digest)[..8]);
        }
        let rel = format!("{FRAGMENTS_DIR}/{name}");
        let path = self.run_dir.join(&rel);
        write_atomic(&path, &fragment.to_canonical_json()).map_err(io_err(&path))?;
        Ok(rel)
    }
}
