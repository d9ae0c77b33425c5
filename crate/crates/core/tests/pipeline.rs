use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use abm_extract::gateway::{ScriptFile, ScriptedBackend};
use abm_extract::pipeline::{InvocationStatus, DOCUMENT_FILE, STATE_FILE};
use abm_extract::{
    load_document, Backend, BackendError, Config, Document, Gateway, Pipeline, PipelineError,
    PromptId, QARequest, RetryPolicy,
};

const TIMESTAMP: &str = "2026-01-01T00:00:00Z";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/predator_prey")
}

fn document() -> Document {
    load_document(&fixtures().join("document.md"), 1 << 21).unwrap()
}

fn script() -> ScriptFile {
    serde_json::from_str(&fs::read_to_string(fixtures().join("script.json")).unwrap()).unwrap()
}

fn replace_reply(script: &mut ScriptFile, id: PromptId, reply: &str) {
    for entry in script.responses.iter_mut().filter(|e| e.prompt_id == id) {
        entry.replies = vec![reply.to_string()];
    }
}

fn pipeline(backend: Arc<dyn Backend>, config: Config) -> Pipeline {
    Pipeline::new(Gateway::new(backend, RetryPolicy::immediate(0)), config)
        .with_timestamp(TIMESTAMP)
}

fn golden_bytes() -> String {
    fs::read_to_string(fixtures().join("expected.abmspec.json")).unwrap()
}

#[test]
fn golden_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::from_script(&script()));
    let outcome = pipeline(backend, Config::default())
        .execute(&document(), dir.path())
        .unwrap();
    assert!(outcome.is_complete());
    assert_eq!(outcome.spec.to_canonical_json(), golden_bytes());
    assert_eq!(
        fs::read_to_string(dir.path().join(DOCUMENT_FILE)).unwrap(),
        document().text
    );
    assert_eq!(outcome.error_count(), 0);
    assert_eq!(outcome.warning_count(), 1);
    assert_eq!(outcome.issues[0].code, "unmatched_outcome");
    let names: Vec<String> = fs::read_dir(dir.path().join("fragments"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.contains(&"P1__.json".to_string()), "{names:?}");
    assert!(
        names.contains(&"P4__wolves__energy.json".to_string()),
        "{names:?}"
    );
    assert_eq!(names.len(), 15);
}

#[test]
fn unusable_purpose_reply_leaves_purpose_null_and_continues() {
    let mut s = script();
    replace_reply(
        &mut s,
        PromptId::P1,
        "I could not find a purpose statement in the document.",
    );
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::from_script(&s));
    let outcome = pipeline(backend.clone(), Config::default())
        .execute(&document(), dir.path())
        .unwrap();
    assert!(outcome.spec.purpose.is_none());
    assert!(!outcome.is_complete());
    assert_eq!(outcome.failed(), 1);
    assert_eq!(outcome.succeeded(), 14);
    // One attempt plus two stage retries for the failing stage.
    assert_eq!(backend.calls(), 14 + 3);
    let p1 = outcome
        .state
        .invocations
        .iter()
        .find(|i| i.prompt_id == PromptId::P1)
        .unwrap();
    assert_eq!(p1.status, InvocationStatus::Failed);
    assert_eq!(p1.attempts, 3);
    assert!(
        outcome
            .issues
            .iter()
            .any(|i| i.code == "no_json_found" && i.is_error()),
        "{:?}",
        outcome.issues
    );
    assert_eq!(outcome.spec.agent_sets.len(), 2);
}

#[test]
fn failed_parent_skips_its_children() {
    let mut s = script();
    replace_reply(&mut s, PromptId::P8, "{'Model-Level': 'none'}");
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::from_script(&s));
    let outcome = pipeline(backend, Config::default())
        .execute(&document(), dir.path())
        .unwrap();
    assert_eq!(outcome.failed(), 1);
    assert_eq!(outcome.skipped(), 1);
    assert!(outcome.spec.model_level.is_empty());
    let skipped = outcome
        .state
        .invocations
        .iter()
        .find(|i| i.status == InvocationStatus::Skipped)
        .unwrap();
    assert_eq!(skipped.prompt_id, PromptId::P9);
    assert_eq!(skipped.attempts, 0);
}

#[test]
fn strict_mode_aborts_on_first_failure() {
    let mut s = script();
    replace_reply(&mut s, PromptId::P5, "no");
    let mut config = Config::default();
    config.pipeline.strict = true;
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline(Arc::new(ScriptedBackend::from_script(&s)), config)
        .execute(&document(), dir.path())
        .unwrap_err();
    assert!(
        matches!(err, PipelineError::Aborted { ref stage, .. } if stage == "P5"),
        "{err}"
    );
    assert!(!dir.path().join("spec.abmspec.json").exists());
}

#[test]
fn fan_out_follows_only_names_from_the_parent() {
    let mut s = script();
    replace_reply(
        &mut s,
        PromptId::P2,
        "{'Wolves': {'short_description': 'Predators', 'agent_role': 'predator'}}",
    );
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::from_script(&s));
    let outcome = pipeline(backend.clone(), Config::default())
        .execute(&document(), dir.path())
        .unwrap();
    assert!(outcome.is_complete());
    assert!(outcome.state.invocations.iter().all(|i| i
        .bindings
        .get("AGENT_SET_NAME")
        .is_none_or(|n| n == "Wolves")));
    // 5 static stages, 1 set, 2 agent variables, 2 space and 2 model-level variables.
    assert_eq!(backend.calls(), 5 + 1 + 2 + 2 + 2);
    assert_eq!(outcome.spec.agent_sets.len(), 1);
}

#[test]
fn empty_document_is_rejected_before_any_call() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::from_script(&script()));
    let err = pipeline(backend.clone(), Config::default())
        .execute(&Document::from_text("blank.md", "\n \n"), dir.path())
        .unwrap_err();
    assert!(matches!(err, PipelineError::EmptyDocument));
    assert_eq!(backend.calls(), 0);
}

#[test]
fn resume_of_a_finished_run_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(
        Arc::new(ScriptedBackend::from_script(&script())),
        Config::default(),
    )
    .execute(&document(), dir.path())
    .unwrap();
    let silent = Arc::new(ScriptedBackend::new("scripted-predator-prey"));
    let outcome = pipeline(silent.clone(), Config::default())
        .resume(dir.path())
        .unwrap();
    assert_eq!(silent.calls(), 0);
    assert_eq!(outcome.spec.to_canonical_json(), golden_bytes());
}

#[test]
fn resume_retries_failed_invocations() {
    let mut s = script();
    replace_reply(&mut s, PromptId::P6, "nothing");
    let dir = tempfile::tempdir().unwrap();
    let first = pipeline(
        Arc::new(ScriptedBackend::from_script(&s)),
        Config::default(),
    )
    .execute(&document(), dir.path())
    .unwrap();
    assert!(!first.is_complete());

    let backend = Arc::new(ScriptedBackend::from_script(&script()));
    let outcome = pipeline(backend.clone(), Config::default())
        .resume(dir.path())
        .unwrap();
    assert!(outcome.is_complete());
    // P6 and its two children.
    assert_eq!(backend.calls(), 3);
    assert_eq!(outcome.spec.to_canonical_json(), golden_bytes());
}

#[test]
fn resume_rejects_a_changed_document() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(
        Arc::new(ScriptedBackend::from_script(&script())),
        Config::default(),
    )
    .interrupt_after(3)
    .execute(&document(), dir.path())
    .unwrap_err();
    fs::write(dir.path().join(DOCUMENT_FILE), "An edited document.").unwrap();
    let err = pipeline(
        Arc::new(ScriptedBackend::from_script(&script())),
        Config::default(),
    )
    .resume(dir.path())
    .unwrap_err();
    assert!(matches!(err, PipelineError::StaleRun { .. }), "{err}");
}

#[test]
fn resume_rejects_corrupt_state() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(
        Arc::new(ScriptedBackend::from_script(&script())),
        Config::default(),
    )
    .execute(&document(), dir.path())
    .unwrap();
    fs::write(dir.path().join(STATE_FILE), "{\"invocations\": 3").unwrap();
    let err = pipeline(Arc::new(ScriptedBackend::new("s")), Config::default())
        .resume(dir.path())
        .unwrap_err();
    assert!(matches!(err, PipelineError::CorruptState(_)), "{err}");
}

struct Unreachable(AtomicUsize);

impl Backend for Unreachable {
    fn id(&self) -> String {
        "unreachable".into()
    }

    fn send(&self, _: &QARequest) -> Result<String, BackendError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(BackendError::Transport("connection refused".into()))
    }
}

#[test]
fn unreachable_backend_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(Unreachable(AtomicUsize::new(0)));
    let err = pipeline(backend.clone(), Config::default())
        .execute(&document(), dir.path())
        .unwrap_err();
    assert!(matches!(err, PipelineError::BackendUnavailable), "{err}");
    // Five static stages, three attempts each, and nothing else.
    assert_eq!(backend.0.load(Ordering::SeqCst), 15);
}

#[test]
fn parallelism_does_not_change_results() {
    let run = |parallelism: usize| {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::default();
        config.pipeline.parallelism = parallelism;
        let backend = Arc::new(
            ScriptedBackend::from_script(&script()).with_latency(Duration::from_millis(2)),
        );
        let outcome = pipeline(backend, config)
            .execute(&document(), dir.path())
            .unwrap();
        let state = fs::read_to_string(dir.path().join(STATE_FILE)).unwrap();
        (
            outcome.spec.to_canonical_json(),
            state.replace(&format!("\"parallelism\": {parallelism}"), ""),
        )
    };
    let (spec_1, state_1) = run(1);
    let (spec_8, state_8) = run(8);
    assert_eq!(spec_1, spec_8);
    assert_eq!(spec_1, golden_bytes());
    assert_eq!(state_1, state_8);
}
