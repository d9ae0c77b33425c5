use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use abm_extract::canonical::to_canonical_json;
use abm_extract::gateway::{open_transcript_store, ReplayBackend, TranscriptMode, TRANSCRIPT_FILE};
use abm_extract::pipeline::{write_atomic, RunOutcome, STATE_FILE};
use abm_extract::scaffold::{SCHEDULE_FILE, SKELETON_FILE};
use abm_extract::{
    build_schedule, emit_skeleton, load_document, Backend, Config, DocumentError, Gateway,
    Pipeline, PipelineError, RetryPolicy, RunState,
};
use clap::Args;

use crate::{exit, prompts, Cli, Failure};

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Conceptual model document (UTF-8 text or Markdown).
    pub document: PathBuf,
    /// Answer every call from the run directory's transcript; no network.
    #[arg(long, conflicts_with = "record")]
    pub replay: bool,
    /// Record every backend call into the run directory's transcript.
    #[arg(long)]
    pub record: bool,
    /// Continue the run persisted in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Abort as soon as a stage exhausts its retries.
    #[arg(long)]
    pub strict: bool,
}

fn config_failure(e: impl ToString) -> Failure {
    Failure::new(exit::CONFIG, e.to_string())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match e {
        PipelineError::EmptyDocument => exit::DATA,
        _ => exit::FAILURE,
    };
    Failure::new(code, e.to_string())
}

/// RFC 3339 time from `SOURCE_DATE_EPOCH`, for reproducible runs.
fn source_date_epoch() -> Option<String> {
    let secs: i64 = std::env::var("SOURCE_DATE_EPOCH")
        .ok()?
        .trim()
        .parse()
        .ok()?;
    let time = chrono::DateTime::from_timestamp(secs, 0)?;
    Some(time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

pub fn run(cli: &Cli, args: &ExtractArgs) -> Result<u8, Failure> {
    let recorded = if args.replay {
        RunState::load(&cli.run_dir).ok()
    } else {
        None
    };
    let mut config = match (&cli.config, &recorded) {
        (Some(path), _) => Config::load(path).map_err(config_failure)?,
        // A replay reproduces the recorded run, configuration included.
        (None, Some(state)) => state.config_snapshot.clone(),
        (None, None) if args.replay => Config::default(),
        (None, None) => {
            return Err(Failure::new(
                exit::CONFIG,
                "a --config file is required unless --replay is given",
            ))
        }
    };
    if args.strict {
        config.pipeline.strict = true;
    }
    let catalog = prompts::load_catalog(cli, Some(&config))?;

    let document = match load_document(&args.document, config.pipeline.max_document_bytes) {
        Ok(doc) => doc,
        Err(e @ DocumentError::NotFound(_)) => return Err(Failure::usage(e.to_string())),
        Err(e) => return Err(Failure::new(exit::DATA, e.to_string())),
    };
    let run_dir = &cli.run_dir;

    let (gateway, timestamp) = if args.replay {
        let store = open_transcript_store(run_dir, TranscriptMode::Replay)
            .map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
        let backend: Arc<dyn Backend> = Arc::new(ReplayBackend::new(Arc::new(store)));
        let started_at = recorded.map(|s| s.started_at);
        (
            Gateway::new(backend, RetryPolicy::immediate(0)),
            started_at.or_else(source_date_epoch),
        )
    } else {
        config.validate().map_err(config_failure)?;
        let backend = config.build_backend().map_err(config_failure)?;
        let mut gateway = Gateway::new(backend, config.retry_policy());
        if args.record {
            if !args.resume {
                remove_if_present(&run_dir.join(TRANSCRIPT_FILE))?;
            }
            let store = open_transcript_store(run_dir, TranscriptMode::Record)
                .map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
            gateway = gateway.with_recorder(Arc::new(store));
        }
        (gateway, source_date_epoch())
    };

    let mut pipeline = Pipeline::new(gateway, config).with_catalog(catalog);
    if let Some(ts) = timestamp {
        pipeline = pipeline.with_timestamp(ts);
    }
    let outcome = if args.resume && run_dir.join(STATE_FILE).exists() {
        let state = RunState::load(run_dir).map_err(|e| Failure::new(exit::FAILURE, e))?;
        if state.document_hash != document.content_hash {
            return Err(Failure::new(
                exit::FAILURE,
                format!(
                    "{} is not the document of the run in {}",
                    args.document.display(),
                    run_dir.display()
                ),
            ));
        }
        pipeline.resume(run_dir)
    } else {
        pipeline.execute(&document, run_dir)
    }
    .map_err(pipeline_failure)?;

    write_scaffold(run_dir, &outcome)?;
    if !cli.quiet {
        println!("{}", summary(&outcome, run_dir));
    }
    Ok(if outcome.is_complete() {
        exit::OK
    } else {
        exit::PARTIAL
    })
}

fn remove_if_present(path: &Path) -> Result<(), Failure> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Failure::new(
            exit::FAILURE,
            format!("cannot remove {}: {e}", path.display()),
        )),
    }
}

fn write_scaffold(run_dir: &Path, outcome: &RunOutcome) -> Result<(), Failure> {
    let schedule = build_schedule(&outcome.spec);
    let write = |name: &str, contents: &str| {
        let path = run_dir.join(name);
        write_atomic(&path, contents).map_err(|e| {
            Failure::new(
                exit::FAILURE,
                format!("cannot write {}: {e}", path.display()),
            )
        })
    };
    write(SCHEDULE_FILE, &to_canonical_json(&schedule))?;
    write(SKELETON_FILE, &emit_skeleton(&outcome.spec, &schedule))
}

fn summary(outcome: &RunOutcome, run_dir: &Path) -> String {
    format!(
        "stages: {} succeeded, {} failed, {} skipped; issues: {} error(s), {} warning(s); run directory: {}",
        outcome.succeeded(),
        outcome.failed(),
        outcome.skipped(),
        outcome.error_count(),
        outcome.warning_count(),
        run_dir.display()
    )
}
