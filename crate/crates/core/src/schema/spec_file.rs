use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde_json::Value;

use super::{
    normalize_data_type, normalize_frequency, parse_execution_order, AgentSet, ModelPurpose,
    ModelSpecification, Provenance, SpaceSpec, ValidationIssue, VariableSpec,
};

/// Top-level keys of a specification file, in serialization order.
pub const SPEC_TOP_LEVEL_KEYS: [&str; 5] = [
    "provenance",
    "purpose",
    "agent_sets",
    "space",
    "model_level",
];

/// Parses specification file text into a JSON value.
pub fn parse_specification(text: &str) -> Result<Value, serde_json::Error> {
    serde_json::from_str(text)
}

/// Checks a decoded specification file against the canonical types and
/// their invariants. Returns the typed specification when no error was
/// found.
pub fn validate_specification(value: &Value) -> (Option<ModelSpecification>, Vec<ValidationIssue>) {
    let mut issues = Vec::new();
    let Value::Object(map) = value else {
        issues.push(ValidationIssue::error(
            "/",
            "not_object",
            "specification must be a JSON object",
        ));
        return (None, issues);
    };
    for key in SPEC_TOP_LEVEL_KEYS {
        if !map.contains_key(key) {
            issues.push(ValidationIssue::error(
                "/",
                "missing_key",
                format!("missing top-level key `{key}`"),
            ));
        }
    }
    for key in map
        .keys()
        .filter(|k| !SPEC_TOP_LEVEL_KEYS.contains(&k.as_str()))
    {
        issues.push(ValidationIssue::warning(
            super::child_path("/", key),
            "unknown_key",
            format!("unexpected top-level key `{key}`"),
        ));
    }
    if super::has_errors(&issues) {
        return (None, issues);
    }

    let provenance: Option<Provenance> = typed(map.get("provenance"), "/provenance", &mut issues);
    let purpose: Option<Option<ModelPurpose>> = typed(map.get("purpose"), "/purpose", &mut issues);
    let agent_sets: Option<Vec<AgentSet>> =
        typed(map.get("agent_sets"), "/agent_sets", &mut issues);
    let space: Option<Option<SpaceSpec>> = typed(map.get("space"), "/space", &mut issues);
    let model_level: Option<Vec<VariableSpec>> =
        typed(map.get("model_level"), "/model_level", &mut issues);
    let (Some(provenance), Some(purpose), Some(agent_sets), Some(space), Some(model_level)) =
        (provenance, purpose, agent_sets, space, model_level)
    else {
        return (None, issues);
    };
    let spec = ModelSpecification {
        provenance,
        purpose,
        agent_sets,
        space,
        model_level,
    };
    check_invariants(&spec, &mut issues);
    if super::has_errors(&issues) {
        (None, issues)
    } else {
        (Some(spec), issues)
    }
}

fn typed<T: DeserializeOwned>(
    value: Option<&Value>,
    path: &str,
    issues: &mut Vec<ValidationIssue>,
) -> Option<T> {
    match serde_json::from_value(value.cloned().unwrap_or(Value::Null)) {
        Ok(v) => Some(v),
        Err(e) => {
            issues.push(ValidationIssue::error(path, "wrong_type", e.to_string()));
            None
        }
    }
}

fn check_invariants(spec: &ModelSpecification, issues: &mut Vec<ValidationIssue>) {
    if let Some(p) = &spec.purpose {
        for (field, items) in [
            ("research_questions", &p.research_questions),
            ("system_boundaries", &p.system_boundaries),
        ] {
            for (i, s) in items.iter().enumerate() {
                if s.trim().is_empty() {
                    issues.push(ValidationIssue::error(
                        format!("/purpose/{field}/{i}"),
                        "empty_entry",
                        "entries must be non-empty",
                    ));
                }
            }
        }
        if p.outcome_variables.keys().any(|k| k.trim().is_empty()) {
            issues.push(ValidationIssue::error(
                "/purpose/outcome_variables",
                "empty_name",
                "outcome variable names must be non-empty",
            ));
        }
    }

    let mut set_names = BTreeSet::new();
    for (i, set) in spec.agent_sets.iter().enumerate() {
        let path = format!("/agent_sets/{i}");
        if set.name.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{path}/name"),
                "empty_name",
                "agent-set name is empty",
            ));
        } else if !set_names.insert(set.name.as_str()) {
            issues.push(ValidationIssue::error(
                format!("{path}/name"),
                "duplicate_name",
                format!("agent set `{}` appears more than once", set.name),
            ));
        }
        check_variables(&set.variables, &format!("{path}/variables"), issues);
    }
    if let Some(space) = &spec.space {
        check_variables(&space.variables, "/space/variables", issues);
    }
    check_variables(&spec.model_level, "/model_level", issues);
}

fn check_variables(vars: &[VariableSpec], path: &str, issues: &mut Vec<ValidationIssue>) {
    let mut names = BTreeSet::new();
    for (j, var) in vars.iter().enumerate() {
        let p = format!("{path}/{j}");
        if var.name.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{p}/name"),
                "empty_name",
                "variable name is empty",
            ));
        } else if !names.insert(var.name.as_str()) {
            issues.push(ValidationIssue::error(
                format!("{p}/name"),
                "duplicate_name",
                format!(
                    "variable `{}` appears more than once in this scope",
                    var.name
                ),
            ));
        }
        let d = &var.descriptor;
        if d.data_type != normalize_data_type(d.raw_data_type.as_deref()) {
            issues.push(ValidationIssue::error(
                format!("{p}/descriptor/data_type"),
                "inconsistent_normalization",
                "data_type does not match raw_data_type",
            ));
        }
        if let Some(dy) = &var.dynamics {
            if dy.frequency != normalize_frequency(dy.raw_frequency.as_deref()) {
                issues.push(ValidationIssue::error(
                    format!("{p}/dynamics/frequency"),
                    "inconsistent_normalization",
                    "frequency does not match raw_frequency",
                ));
            }
            if dy.execution_order != parse_execution_order(dy.raw_execution_order.as_deref()) {
                issues.push(ValidationIssue::error(
                    format!("{p}/dynamics/execution_order"),
                    "inconsistent_normalization",
                    "execution_order does not match raw_execution_order",
                ));
            }
        }
    }
}
