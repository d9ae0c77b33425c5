//! Extraction of agent-based model specifications from conceptual model
//! documents through a chain of nine prompts to a question-answering model.
//!
//! The flow is: [`document`] loads the text, [`prompts`] renders each stage,
//! [`gateway`] sends it, [`recovery`] pulls a JSON object out of the reply,
//! [`schema`] validates and merges the stage fragments, [`pipeline`] drives
//! and persists the whole run, and [`scaffold`] turns the merged
//! specification into a schedule and a pseudocode skeleton.

pub mod canonical;
pub mod config;
pub mod document;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod recovery;
pub mod scaffold;
pub mod schema;

pub use config::Config;
pub use document::{load_document, Document, DocumentError};
pub use gateway::{
    Backend, BackendError, Gateway, GatewayError, QARequest, QAResponse, RetryPolicy,
};
pub use pipeline::{Pipeline, PipelineError, RunOutcome, RunState};
pub use prompts::{Bindings, Catalog, PromptId};
pub use recovery::{
    extract_json, normalize_keys, recover_stage_output, RecoveryError, RecoveryReport, RepairTag,
};
pub use scaffold::{build_schedule, emit_skeleton, Schedule, ScheduleEntry};
pub use schema::{Fragment, ModelSpecification, ValidationIssue};
