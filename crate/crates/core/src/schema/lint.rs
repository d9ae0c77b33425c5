use std::collections::{BTreeMap, BTreeSet};

use super::merge::variable_path;
use super::{Frequency, ModelSpecification, ValidationIssue};

/// Advisory checks over a merged specification. Every finding is a warning.
pub fn lint(spec: &ModelSpecification) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();

    // duplicate execution_order within one (scope, frequency) group
    let mut groups: BTreeMap<(&str, Frequency, u64), Vec<&str>> = BTreeMap::new();
    for (scope, var) in spec.variables() {
        if let Some(d) = &var.dynamics {
            if let Some(order) = d.execution_order {
                groups
                    .entry((scope, d.frequency, order))
                    .or_default()
                    .push(&var.name);
            }
        }
    }
    for ((scope, frequency, order), names) in &groups {
        if names.len() > 1 {
            let path = variable_path(spec, scope, names[1]).unwrap_or_else(|| "/".into());
            issues.push(ValidationIssue::warning(
                path,
                "duplicate_order",
                format!(
                    "{scope}: variables {} share execution order {order} ({})",
                    names.join(", "),
                    serde_json::to_value(frequency)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default()
                ),
            ));
        }
    }

    for (scope, var) in spec.variables() {
        if let Some(d) = &var.dynamics {
            if d.equation.is_some() && d.frequency == Frequency::Unknown {
                let path = variable_path(spec, scope, &var.name).unwrap_or_else(|| "/".into());
                issues.push(ValidationIssue::warning(
                    format!("{path}/dynamics/frequency"),
                    "equation_without_frequency",
                    format!(
                        "{scope}.{} has an equation but no recognizable frequency",
                        var.name
                    ),
                ));
            }
        }
    }

    if let Some(purpose) = &spec.purpose {
        let names: BTreeSet<String> = spec
            .variables()
            .map(|(_, v)| v.name.to_lowercase())
            .collect();
        for outcome in purpose.outcome_variables.keys() {
            if !names.contains(&outcome.to_lowercase()) {
                issues.push(ValidationIssue::warning(
                    super::child_path("/purpose/outcome_variables", outcome),
                    "unmatched_outcome",
                    format!("outcome variable `{outcome}` matches no extracted variable"),
                ));
            }
        }
    }

    for (i, set) in spec.agent_sets.iter().enumerate() {
        if set.variables.is_empty() {
            issues.push(ValidationIssue::warning(
                format!("/agent_sets/{i}"),
                "empty_agent_set",
                format!("agent set `{}` has no variables", set.name),
            ));
        }
    }
    issues
}
