use std::collections::BTreeSet;

use super::state::{InvocationStatus, StageInvocation};
use crate::prompts::{Bindings, PromptId, AGENT_SET_NAME, VAR};
use crate::schema::Fragment;

/// Stages whose prompts take no input from other stages.
pub const STATIC_STAGES: [PromptId; 5] = [
    PromptId::P1,
    PromptId::P2,
    PromptId::P5,
    PromptId::P6,
    PromptId::P8,
];

/// The invocations that become executable given what has been planned so
/// far and the fragments produced.
///
/// Returned invocations are pending, except for placeholders recording
/// that a fan-out never happened because its parent failed; those are
/// skipped and carry only the bindings known from the parent. Nothing
/// already present in `existing` is returned again.
pub fn plan(existing: &[StageInvocation], fragments: &[Fragment]) -> Vec<StageInvocation> {
    let mut seen: BTreeSet<(PromptId, Bindings)> = existing
        .iter()
        .map(|i| (i.prompt_id, i.bindings.clone()))
        .collect();
    let mut out = Vec::new();
    let mut push = |inv: StageInvocation, out: &mut Vec<StageInvocation>| {
        if seen.insert((inv.prompt_id, inv.bindings.clone())) {
            out.push(inv);
        }
    };

    for id in STATIC_STAGES {
        push(StageInvocation::pending(id, Bindings::new()), &mut out);
    }

    for fragment in fragments {
        let Some(child) = child_stage(fragment.prompt_id()) else {
            continue;
        };
        let parent = fragment.bindings();
        let names: BTreeSet<String> = fragment.fan_out_names().into_iter().collect();
        for name in names {
            let mut bindings = parent.clone();
            let key = if child == PromptId::P3 {
                AGENT_SET_NAME
            } else {
                VAR
            };
            bindings.insert(key.to_string(), name);
            push(StageInvocation::pending(child, bindings), &mut out);
        }
    }

    for inv in existing
        .iter()
        .filter(|i| i.status == InvocationStatus::Failed)
    {
        if let Some(child) = child_stage(inv.prompt_id) {
            let reason = format!("parent {} failed", inv.label());
            push(
                StageInvocation::skipped(child, inv.bindings.clone(), reason),
                &mut out,
            );
        }
    }
    out
}

fn child_stage(parent: PromptId) -> Option<PromptId> {
    match parent {
        PromptId::P2 => Some(PromptId::P3),
        PromptId::P3 => Some(PromptId::P4),
        PromptId::P6 => Some(PromptId::P7),
        PromptId::P8 => Some(PromptId::P9),
        _ => None,
    }
}
