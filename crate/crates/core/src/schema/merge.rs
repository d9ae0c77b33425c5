use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{
    child_path, AgentSet, Fragment, ModelSpecification, Provenance, SpaceSpec, ValidationIssue,
    VariableDescriptor, VariableDynamics, VariableSpec, MODEL_LEVEL_SCOPE, SPACE_SCOPE,
};
use crate::prompts::{Bindings, PromptId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MergeError {
    #[error("conflicting fragments for {stage} {bindings:?}")]
    ConflictingFragments { stage: PromptId, bindings: Bindings },
}

impl MergeError {
    pub fn code(&self) -> &'static str {
        "conflicting_fragments"
    }
}

#[derive(Default)]
struct VarBuild {
    descriptor: Option<VariableDescriptor>,
    dynamics: Option<VariableDynamics>,
}

#[derive(Default)]
struct ScopeBuild {
    listed: bool,
    short_description: Option<String>,
    agent_role: Option<String>,
    vars: BTreeMap<String, VarBuild>,
}

/// Assembles stage fragments into one specification.
///
/// Identical duplicates are tolerated; two different fragments for the same
/// stage and bindings are a conflict. The result does not depend on the
/// order of `fragments`: sets and variables are sorted by name.
pub fn merge(
    fragments: &[Fragment],
    provenance: Provenance,
) -> Result<(ModelSpecification, Vec<ValidationIssue>), MergeError> {
    let mut unique: BTreeMap<(PromptId, Bindings), (String, &Fragment)> = BTreeMap::new();
    for f in fragments {
        let key = (f.prompt_id(), f.bindings());
        let bytes = f.to_canonical_json();
        match unique.get(&key) {
            Some((existing, _)) if *existing != bytes => {
                return Err(MergeError::ConflictingFragments {
                    stage: key.0,
                    bindings: key.1,
                })
            }
            Some(_) => {}
            None => {
                unique.insert(key, (bytes, f));
            }
        }
    }

    let mut purpose = None;
    let mut agents: BTreeMap<String, ScopeBuild> = BTreeMap::new();
    let mut space: Option<ScopeBuild> = None;
    let mut space_header: (Option<String>, Option<String>) = (None, None);
    let mut model = ScopeBuild::default();
    // (scope, variable, code)
    let mut orphans: BTreeSet<(String, String, &'static str)> = BTreeSet::new();

    // BTreeMap order is P1..P9, so descriptors land before dynamics.
    for (_, fragment) in unique.values() {
        match fragment {
            Fragment::Purpose(p) => purpose = Some(p.clone()),
            Fragment::AgentSets(sets) => {
                for s in sets {
                    let entry = agents.entry(s.name.clone()).or_default();
                    entry.listed = true;
                    entry.short_description = s.short_description.clone();
                    entry.agent_role = s.agent_role.clone();
                }
            }
            Fragment::AgentVariables {
                agent_set,
                variables,
            } => {
                let scope = agents.entry(agent_set.clone()).or_default();
                attach_descriptors(scope, variables);
            }
            Fragment::AgentDynamics {
                agent_set,
                variable,
                dynamics,
            } => {
                let scope = agents.entry(agent_set.clone()).or_default();
                if attach_dynamics(scope, variable, dynamics) {
                    orphans.insert((agent_set.clone(), variable.clone(), "orphan_dynamics"));
                }
            }
            Fragment::SpaceHeader {
                short_description,
                space_type,
            } => {
                space.get_or_insert_with(ScopeBuild::default);
                space_header = (short_description.clone(), space_type.clone());
            }
            Fragment::SpaceVariables(vars) => {
                attach_descriptors(space.get_or_insert_with(ScopeBuild::default), vars)
            }
            Fragment::SpaceDynamics { variable, dynamics } => {
                if attach_dynamics(
                    space.get_or_insert_with(ScopeBuild::default),
                    variable,
                    dynamics,
                ) {
                    orphans.insert((SPACE_SCOPE.into(), variable.clone(), "orphan_dynamics"));
                }
            }
            Fragment::ModelLevelVariables(vars) => attach_descriptors(&mut model, vars),
            Fragment::ModelLevelDynamics { variable, dynamics } => {
                if attach_dynamics(&mut model, variable, dynamics) {
                    orphans.insert((
                        MODEL_LEVEL_SCOPE.into(),
                        variable.clone(),
                        "orphan_dynamics",
                    ));
                }
            }
        }
    }

    let spec = ModelSpecification {
        provenance,
        purpose,
        agent_sets: agents
            .iter()
            .map(|(name, b)| AgentSet {
                name: name.clone(),
                short_description: b.short_description.clone(),
                agent_role: b.agent_role.clone(),
                variables: finish_vars(&b.vars),
            })
            .collect(),
        space: space.as_ref().map(|b| SpaceSpec {
            short_description: space_header.0.clone(),
            space_type: space_header.1.clone(),
            variables: finish_vars(&b.vars),
        }),
        model_level: finish_vars(&model.vars),
    };

    let mut issues = Vec::new();
    for (i, (name, b)) in agents.iter().enumerate() {
        if !b.listed {
            issues.push(ValidationIssue::warning(
                format!("/agent_sets/{i}"),
                "orphan_variables",
                format!("agent set `{name}` has variables but was not listed"),
            ));
        }
    }
    for (scope, variable, code) in &orphans {
        let path = variable_path(&spec, scope, variable).unwrap_or_else(|| "/".into());
        issues.push(ValidationIssue::warning(
            path,
            code,
            format!("dynamics for `{scope}.{variable}` without a variable descriptor"),
        ));
    }
    Ok((spec, issues))
}

fn attach_descriptors(scope: &mut ScopeBuild, vars: &[(String, VariableDescriptor)]) {
    for (name, d) in vars {
        scope.vars.entry(name.clone()).or_default().descriptor = Some(d.clone());
    }
}

/// Returns true when the variable had no descriptor.
fn attach_dynamics(scope: &mut ScopeBuild, name: &str, dynamics: &VariableDynamics) -> bool {
    let entry = scope.vars.entry(name.to_string()).or_default();
    entry.dynamics = Some(dynamics.clone());
    entry.descriptor.is_none()
}

fn finish_vars(vars: &BTreeMap<String, VarBuild>) -> Vec<VariableSpec> {
    vars.iter()
        .map(|(name, b)| VariableSpec {
            name: name.clone(),
            descriptor: b.descriptor.clone().unwrap_or_default(),
            dynamics: b.dynamics.clone(),
        })
        .collect()
}

/// Location of a variable inside the serialized specification.
pub(crate) fn variable_path(
    spec: &ModelSpecification,
    scope: &str,
    variable: &str,
) -> Option<String> {
    let index = |vars: &[VariableSpec]| vars.iter().position(|v| v.name == variable);
    if scope == SPACE_SCOPE {
        if let Some(j) = spec.space.as_ref().and_then(|s| index(&s.variables)) {
            return Some(child_path("/space/variables", j));
        }
    }
    if scope == MODEL_LEVEL_SCOPE {
        if let Some(j) = index(&spec.model_level) {
            return Some(child_path("/model_level", j));
        }
    }
    let (i, set) = spec
        .agent_sets
        .iter()
        .enumerate()
        .find(|(_, a)| a.name == scope)?;
    let j = index(&set.variables)?;
    Some(format!("/agent_sets/{i}/variables/{j}"))
}
