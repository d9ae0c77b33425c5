use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{
    child_path, has_errors, AgentSetSummary, Fragment, ModelPurpose, ValidationIssue,
    VariableDescriptor, VariableDynamics,
};
use crate::prompts::{Bindings, PromptId, AGENT_SET_NAME, VAR};
use crate::recovery::{EXECUTION_ORDER_KEY, MODEL_LEVEL_KEY, MODEL_PURPOSE_KEY, SPACE_KEY};

const PURPOSE_FIELDS: &[&str] = &[
    "full_description",
    "research_questions",
    "system_boundaries",
    "outcome_variables",
];
const SUMMARY_FIELDS: &[&str] = &["short_description", "agent_role"];
const DESCRIPTOR_FIELDS: &[&str] = &["short_description", "data_type", "initial_value"];
const DYNAMICS_FIELDS: &[&str] = &[
    "value_boundaries",
    "equation",
    EXECUTION_ORDER_KEY,
    "frequency",
];
const SPACE_HEADER_FIELDS: &[&str] = &["short_description", "type"];

/// Outcome of validating one stage payload. `fragment` is present iff no
/// issue has error severity.
#[derive(Debug, Clone, PartialEq)]
pub struct StageValidation {
    pub fragment: Option<Fragment>,
    pub issues: Vec<ValidationIssue>,
}

/// Validates a key-normalized stage payload against the stage's structure.
///
/// `bindings` name the expected wrapper keys of the fan-out stages. When a
/// binding is absent, a single top-level (or variable-level) key is
/// accepted as the name.
pub fn validate_stage_payload(
    stage: PromptId,
    bindings: &Bindings,
    value: &Value,
) -> StageValidation {
    let mut v = Validator::default();
    let fragment = v.stage(stage, bindings, value);
    let fragment = if has_errors(&v.issues) {
        None
    } else {
        fragment
    };
    StageValidation {
        fragment,
        issues: v.issues,
    }
}

#[derive(Default)]
struct Validator {
    issues: Vec<ValidationIssue>,
}

impl Validator {
    fn error(&mut self, path: &str, code: &str, message: impl Into<String>) {
        self.issues
            .push(ValidationIssue::error(path, code, message));
    }

    fn warn(&mut self, path: &str, code: &str, message: impl Into<String>) {
        self.issues
            .push(ValidationIssue::warning(path, code, message));
    }

    fn stage(&mut self, stage: PromptId, bindings: &Bindings, value: &Value) -> Option<Fragment> {
        let root = self.object(value, "/")?;
        let agent = bindings.get(AGENT_SET_NAME).map(String::as_str);
        let var = bindings.get(VAR).map(String::as_str);
        match stage {
            PromptId::P1 => {
                let (_, body) = self.wrapper(root, "/", Some(MODEL_PURPOSE_KEY))?;
                self.purpose(body, &child_path("/", MODEL_PURPOSE_KEY))
                    .map(Fragment::Purpose)
            }
            PromptId::P2 => Some(Fragment::AgentSets(self.agent_sets(root))),
            PromptId::P3 => {
                let (name, body) = self.wrapper(root, "/", agent)?;
                let variables = self.descriptors(body, &child_path("/", &name))?;
                Some(Fragment::AgentVariables {
                    agent_set: name,
                    variables,
                })
            }
            PromptId::P4 => {
                let (agent_set, body) = self.wrapper(root, "/", agent)?;
                let path = child_path("/", &agent_set);
                let (variable, dynamics) = self.dynamics_wrapper(body, &path, var)?;
                Some(Fragment::AgentDynamics {
                    agent_set,
                    variable,
                    dynamics,
                })
            }
            PromptId::P5 => {
                let (_, body) = self.wrapper(root, "/", Some(SPACE_KEY))?;
                let path = child_path("/", SPACE_KEY);
                let fields = self.record(body, &path, SPACE_HEADER_FIELDS)?;
                Some(Fragment::SpaceHeader {
                    short_description: fields.text("short_description"),
                    space_type: fields.text("type"),
                })
            }
            PromptId::P6 => {
                let (_, body) = self.wrapper(root, "/", Some(SPACE_KEY))?;
                let vars = self.descriptors(body, &child_path("/", SPACE_KEY))?;
                Some(Fragment::SpaceVariables(vars))
            }
            PromptId::P7 => {
                let (_, body) = self.wrapper(root, "/", Some(SPACE_KEY))?;
                let (variable, dynamics) =
                    self.dynamics_wrapper(body, &child_path("/", SPACE_KEY), var)?;
                Some(Fragment::SpaceDynamics { variable, dynamics })
            }
            PromptId::P8 => {
                let (_, body) = self.wrapper(root, "/", Some(MODEL_LEVEL_KEY))?;
                let vars = self.descriptors(body, &child_path("/", MODEL_LEVEL_KEY))?;
                Some(Fragment::ModelLevelVariables(vars))
            }
            PromptId::P9 => {
                let (_, body) = self.wrapper(root, "/", Some(MODEL_LEVEL_KEY))?;
                let (variable, dynamics) =
                    self.dynamics_wrapper(body, &child_path("/", MODEL_LEVEL_KEY), var)?;
                Some(Fragment::ModelLevelDynamics { variable, dynamics })
            }
        }
    }

    fn object<'v>(&mut self, value: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        match value {
            Value::Object(map) => Some(map),
            other => {
                self.error(
                    path,
                    "not_object",
                    format!("expected an object, found {}", kind(other)),
                );
                None
            }
        }
    }

    /// Finds the single wrapper object under `map`. With `expected`, the key
    /// must match it (falling back to a lone case-insensitive match); other
    /// keys are reported as unknown.
    fn wrapper<'v>(
        &mut self,
        map: &'v Map<String, Value>,
        path: &str,
        expected: Option<&str>,
    ) -> Option<(String, &'v Map<String, Value>)> {
        let key = match expected {
            Some(expected) if map.contains_key(expected) => expected.to_string(),
            Some(expected) => {
                let folded: Vec<&String> = map
                    .keys()
                    .filter(|k| k.eq_ignore_ascii_case(expected))
                    .collect();
                if let [only] = folded.as_slice() {
                    self.warn(
                        &child_path(path, only),
                        "wrapper_case_mismatch",
                        format!("wrapper `{only}` accepted for `{expected}`"),
                    );
                    (*only).clone()
                } else {
                    self.error(
                        path,
                        "missing_wrapper",
                        format!("missing wrapper key `{expected}`"),
                    );
                    return None;
                }
            }
            None => match map.len() {
                1 => map.keys().next().cloned().unwrap_or_default(),
                0 => {
                    self.error(path, "missing_wrapper", "missing wrapper key");
                    return None;
                }
                n => {
                    self.error(
                        path,
                        "ambiguous_wrapper",
                        format!("expected one wrapper key, found {n}"),
                    );
                    return None;
                }
            },
        };
        for other in map.keys().filter(|k| **k != key) {
            self.warn(
                &child_path(path, other),
                "unknown_key",
                format!("unexpected key `{other}`"),
            );
        }
        if key.trim().is_empty() {
            self.error(path, "empty_name", "wrapper key is empty");
            return None;
        }
        let inner_path = child_path(path, &key);
        let inner = self.object(&map[&key], &inner_path)?;
        // A case-mismatched wrapper still names the bound entity.
        Some((expected.map_or(key, str::to_string), inner))
    }

    fn record(&mut self, map: &Map<String, Value>, path: &str, fields: &[&str]) -> Option<Record> {
        let mut rec = Record::default();
        for field in fields {
            match map.get(*field) {
                Some(v) => {
                    let text = self.text(v, &child_path(path, field));
                    rec.values.insert(field.to_string(), text);
                }
                None => self.warn(
                    path,
                    "missing_field",
                    format!("field `{field}` absent, taken as null"),
                ),
            }
        }
        for key in map.keys().filter(|k| !fields.contains(&k.as_str())) {
            self.warn(
                &child_path(path, key),
                "unknown_key",
                format!("unexpected key `{key}`"),
            );
        }
        Some(rec)
    }

    /// Free-text leaf. Numbers and booleans keep their JSON spelling;
    /// composite values are kept as compact JSON text.
    fn text(&mut self, value: &Value, path: &str) -> Option<String> {
        match value {
            Value::Null => None,
            Value::String(s) if s.trim().is_empty() => None,
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            composite => {
                self.warn(
                    path,
                    "coerced_to_text",
                    format!("{} kept as JSON text", kind(composite)),
                );
                Some(composite.to_string())
            }
        }
    }

    fn purpose(&mut self, map: &Map<String, Value>, path: &str) -> Option<ModelPurpose> {
        let mut purpose = ModelPurpose::default();
        for field in PURPOSE_FIELDS {
            if !map.contains_key(*field) {
                self.warn(
                    path,
                    "missing_field",
                    format!("field `{field}` absent, taken as null"),
                );
            }
        }
        for key in map.keys().filter(|k| !PURPOSE_FIELDS.contains(&k.as_str())) {
            self.warn(
                &child_path(path, key),
                "unknown_key",
                format!("unexpected key `{key}`"),
            );
        }
        if let Some(v) = map.get("full_description") {
            purpose.full_description = self.text(v, &child_path(path, "full_description"));
        }
        purpose.research_questions = self.string_list(
            map.get("research_questions"),
            &child_path(path, "research_questions"),
        )?;
        purpose.system_boundaries = self.string_list(
            map.get("system_boundaries"),
            &child_path(path, "system_boundaries"),
        )?;
        let outcome_path = child_path(path, "outcome_variables");
        match map.get("outcome_variables") {
            None | Some(Value::Null) => {}
            Some(Value::Object(vars)) => {
                for (name, desc) in vars {
                    let p = child_path(&outcome_path, name);
                    if name.trim().is_empty() {
                        self.error(&p, "empty_name", "outcome variable name is empty");
                        continue;
                    }
                    let d = self.text(desc, &p);
                    purpose.outcome_variables.insert(name.clone(), d);
                }
            }
            Some(Value::Array(items)) => {
                self.warn(
                    &outcome_path,
                    "names_without_descriptions",
                    "outcome variables given as a list",
                );
                for (i, item) in items.iter().enumerate() {
                    match self.text(item, &child_path(&outcome_path, i)) {
                        Some(name) => {
                            purpose.outcome_variables.insert(name, None);
                        }
                        None => continue,
                    }
                }
            }
            Some(other) => {
                self.error(
                    &outcome_path,
                    "wrong_type",
                    format!("expected an object, found {}", kind(other)),
                );
                return None;
            }
        }
        Some(purpose)
    }

    fn string_list(&mut self, value: Option<&Value>, path: &str) -> Option<Vec<String>> {
        match value {
            None | Some(Value::Null) => Some(Vec::new()),
            Some(Value::String(s)) => {
                self.warn(
                    path,
                    "wrapped_in_list",
                    "single string taken as a one-element list",
                );
                Some(if s.trim().is_empty() {
                    vec![]
                } else {
                    vec![s.clone()]
                })
            }
            Some(Value::Array(items)) => {
                let mut out = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    let p = child_path(path, i);
                    match self.text(item, &p) {
                        Some(s) => out.push(s),
                        None => self.warn(&p, "empty_entry", "empty entry dropped"),
                    }
                }
                Some(out)
            }
            Some(other) => {
                self.error(
                    path,
                    "wrong_type",
                    format!("expected a list, found {}", kind(other)),
                );
                None
            }
        }
    }

    fn agent_sets(&mut self, map: &Map<String, Value>) -> Vec<AgentSetSummary> {
        let mut out = Vec::new();
        for (name, body) in map {
            let path = child_path("/", name);
            if name.trim().is_empty() {
                self.error(&path, "empty_name", "agent-set name is empty");
                continue;
            }
            let Some(body) = self.object(body, &path) else {
                continue;
            };
            if let Some(rec) = self.record(body, &path, SUMMARY_FIELDS) {
                out.push(AgentSetSummary {
                    name: name.clone(),
                    short_description: rec.text("short_description"),
                    agent_role: rec.text("agent_role"),
                });
            }
        }
        out
    }

    fn descriptors(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
    ) -> Option<Vec<(String, VariableDescriptor)>> {
        let mut out = Vec::new();
        for (name, body) in map {
            let p = child_path(path, name);
            if name.trim().is_empty() {
                self.error(&p, "empty_name", "variable name is empty");
                continue;
            }
            let Some(body) = self.object(body, &p) else {
                continue;
            };
            if let Some(rec) = self.record(body, &p, DESCRIPTOR_FIELDS) {
                out.push((
                    name.clone(),
                    VariableDescriptor::new(
                        rec.text("short_description"),
                        rec.text("data_type"),
                        rec.text("initial_value"),
                    ),
                ));
            }
        }
        Some(out)
    }

    fn dynamics_wrapper(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        var: Option<&str>,
    ) -> Option<(String, VariableDynamics)> {
        let (name, body) = self.wrapper(map, path, var)?;
        let p = child_path(path, &name);
        let rec = self.record(body, &p, DYNAMICS_FIELDS)?;
        let dynamics = VariableDynamics::new(
            rec.text("value_boundaries"),
            rec.text("equation"),
            rec.text(EXECUTION_ORDER_KEY),
            rec.text("frequency"),
        );
        if dynamics.raw_execution_order.is_some() && dynamics.execution_order.is_none() {
            self.warn(
                &child_path(&p, EXECUTION_ORDER_KEY),
                "unranked_order",
                "execution order has no leading integer",
            );
        }
        Some((name, dynamics))
    }
}

#[derive(Default)]
struct Record {
    values: BTreeMap<String, Option<String>>,
}

impl Record {
    fn text(&self, field: &str) -> Option<String> {
        self.values.get(field).cloned().flatten()
    }
}

fn kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}
