//! Canonical model-specification types, stage-fragment validation, merging
//! and linting.
//!
//! Leaf values stay verbatim in `raw_*` fields; the normalized enumerations
//! are derived from them and never replace them.

mod lint;
mod merge;
mod spec_file;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::prompts::{Bindings, PromptId, SchemaRef, AGENT_SET_NAME, VAR};
use crate::recovery::{EXECUTION_ORDER_KEY, MODEL_LEVEL_KEY, MODEL_PURPOSE_KEY, SPACE_KEY};

pub use lint::lint;
pub use merge::{merge, MergeError};
pub use spec_file::{parse_specification, validate_specification, SPEC_TOP_LEVEL_KEYS};
pub use validate::{validate_stage_payload, StageValidation};

/// Scope identifier for space variables.
pub const SPACE_SCOPE: &str = SPACE_KEY;
/// Scope identifier for model-level variables.
pub const MODEL_LEVEL_SCOPE: &str = MODEL_LEVEL_KEY;

/// Every schema the stage validator knows, one per prompt.
pub fn registered_schemas() -> [SchemaRef; 9] {
    PromptId::ALL.map(|id| id.schema_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    /// Slash-delimited location, `/` for the root.
    pub path: String,
    pub code: String,
    pub message: String,
    /// Fragment the issue was raised for, when aggregated across a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

impl ValidationIssue {
    pub fn error(path: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        ValidationIssue {
            severity: Severity::Error,
            path: path.into(),
            code: code.to_string(),
            message: message.into(),
            stage: None,
        }
    }

    pub fn warning(path: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        ValidationIssue {
            severity: Severity::Warning,
            ..ValidationIssue::error(path, code, message)
        }
    }

    pub fn with_stage(mut self, stage: impl Into<String>) -> Self {
        self.stage = Some(stage.into());
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.stage {
            Some(stage) => write!(
                f,
                "{sev}[{}] {stage}{}: {}",
                self.code, self.path, self.message
            ),
            None => write!(f, "{sev}[{}] {}: {}", self.code, self.path, self.message),
        }
    }
}

pub fn has_errors(issues: &[ValidationIssue]) -> bool {
    issues.iter().any(ValidationIssue::is_error)
}

/// Joins a JSON-pointer-like path with one more segment.
pub(crate) fn child_path(parent: &str, segment: impl fmt::Display) -> String {
    let segment = segment.to_string().replace('~', "~0").replace('/', "~1");
    if parent == "/" {
        format!("/{segment}")
    } else {
        format!("{parent}/{segment}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Integer,
    Real,
    Boolean,
    String,
    Categorical,
    List,
    Unknown,
}

/// Case-insensitive table lookup of a free-text data type.
pub fn normalize_data_type(raw: Option<&str>) -> DataType {
    let Some(raw) = raw else {
        return DataType::Unknown;
    };
    match raw.trim().to_lowercase().as_str() {
        "int" | "integer" | "whole number" => DataType::Integer,
        "float" | "double" | "real" | "number" | "numeric" => DataType::Real,
        "bool" | "boolean" => DataType::Boolean,
        "string" | "text" => DataType::String,
        "enum" | "category" | "categorical" => DataType::Categorical,
        "list" | "array" | "set" => DataType::List,
        _ => DataType::Unknown,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    SetupOnce,
    EveryTick,
    Conditional,
    Unknown,
}

const SETUP_WORDS: &[&str] = &["setup_once", "once", "setup", "initialization", "at start"];
const TICK_WORDS: &[&str] = &[
    "every_tick",
    "every tick",
    "each tick",
    "per tick",
    "per step",
    "every step",
    "each step",
    "every time step",
    "each iteration",
];
const CONDITIONAL_WORDS: &[&str] = &["when", "if", "on event", "conditional"];

/// Case-insensitive keyword mapping of a free-text execution frequency.
///
/// Keywords must start at a word boundary so that e.g. `if` does not match
/// inside `unspecified`. Classes are tried in the order setup, tick,
/// conditional.
pub fn normalize_frequency(raw: Option<&str>) -> Frequency {
    let Some(raw) = raw else {
        return Frequency::Unknown;
    };
    let text = raw.to_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| contains_at_word_start(&text, w));
    if has(SETUP_WORDS) {
        Frequency::SetupOnce
    } else if has(TICK_WORDS) {
        Frequency::EveryTick
    } else if has(CONDITIONAL_WORDS) {
        Frequency::Conditional
    } else {
        Frequency::Unknown
    }
}

fn contains_at_word_start(text: &str, word: &str) -> bool {
    text.match_indices(word).any(|(i, _)| {
        text[..i]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Leading non-negative integer of a free-text execution order.
pub fn parse_execution_order(raw: Option<&str>) -> Option<u64> {
    let digits: String = raw?
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelPurpose {
    pub full_description: Option<String>,
    pub research_questions: Vec<String>,
    pub system_boundaries: Vec<String>,
    pub outcome_variables: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSetSummary {
    pub name: String,
    pub short_description: Option<String>,
    pub agent_role: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDescriptor {
    pub short_description: Option<String>,
    pub data_type: DataType,
    pub raw_data_type: Option<String>,
    pub initial_value: Option<String>,
}

impl Default for VariableDescriptor {
    fn default() -> Self {
        VariableDescriptor {
            short_description: None,
            data_type: DataType::Unknown,
            raw_data_type: None,
            initial_value: None,
        }
    }
}

impl VariableDescriptor {
    pub fn new(
        short_description: Option<String>,
        raw_data_type: Option<String>,
        initial_value: Option<String>,
    ) -> Self {
        VariableDescriptor {
            short_description,
            data_type: normalize_data_type(raw_data_type.as_deref()),
            raw_data_type,
            initial_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDynamics {
    pub value_boundaries: Option<String>,
    pub equation: Option<String>,
    pub execution_order: Option<u64>,
    pub raw_execution_order: Option<String>,
    pub frequency: Frequency,
    pub raw_frequency: Option<String>,
}

impl VariableDynamics {
    pub fn new(
        value_boundaries: Option<String>,
        equation: Option<String>,
        raw_execution_order: Option<String>,
        raw_frequency: Option<String>,
    ) -> Self {
        VariableDynamics {
            value_boundaries,
            equation,
            execution_order: parse_execution_order(raw_execution_order.as_deref()),
            raw_execution_order,
            frequency: normalize_frequency(raw_frequency.as_deref()),
            raw_frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub descriptor: VariableDescriptor,
    pub dynamics: Option<VariableDynamics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSet {
    pub name: String,
    pub short_description: Option<String>,
    pub agent_role: Option<String>,
    pub variables: Vec<VariableSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub short_description: Option<String>,
    pub space_type: Option<String>,
    pub variables: Vec<VariableSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub document_hash: String,
    pub backend_id: String,
    pub timestamp: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelSpecification {
    pub provenance: Provenance,
    pub purpose: Option<ModelPurpose>,
    pub agent_sets: Vec<AgentSet>,
    pub space: Option<SpaceSpec>,
    pub model_level: Vec<VariableSpec>,
}

impl ModelSpecification {
    /// Every variable with its scope name, in file order.
    pub fn variables(&self) -> impl Iterator<Item = (&str, &VariableSpec)> {
        let agents = self
            .agent_sets
            .iter()
            .flat_map(|a| a.variables.iter().map(move |v| (a.name.as_str(), v)));
        let space = self
            .space
            .iter()
            .flat_map(|s| s.variables.iter().map(|v| (SPACE_SCOPE, v)));
        let model = self.model_level.iter().map(|v| (MODEL_LEVEL_SCOPE, v));
        agents.chain(space).chain(model)
    }

    /// The `.abmspec.json` byte format.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("specification serializes");
        crate::canonical::to_canonical_string_with_order(&value, &SPEC_TOP_LEVEL_KEYS)
    }
}

/// A validated stage output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fragment {
    Purpose(ModelPurpose),
    AgentSets(Vec<AgentSetSummary>),
    AgentVariables {
        agent_set: String,
        variables: Vec<(String, VariableDescriptor)>,
    },
    AgentDynamics {
        agent_set: String,
        variable: String,
        dynamics: VariableDynamics,
    },
    SpaceHeader {
        short_description: Option<String>,
        space_type: Option<String>,
    },
    SpaceVariables(Vec<(String, VariableDescriptor)>),
    SpaceDynamics {
        variable: String,
        dynamics: VariableDynamics,
    },
    ModelLevelVariables(Vec<(String, VariableDescriptor)>),
    ModelLevelDynamics {
        variable: String,
        dynamics: VariableDynamics,
    },
}

impl Fragment {
    pub fn prompt_id(&self) -> PromptId {
        match self {
            Fragment::Purpose(_) => PromptId::P1,
            Fragment::AgentSets(_) => PromptId::P2,
            Fragment::AgentVariables { .. } => PromptId::P3,
            Fragment::AgentDynamics { .. } => PromptId::P4,
            Fragment::SpaceHeader { .. } => PromptId::P5,
            Fragment::SpaceVariables(_) => PromptId::P6,
            Fragment::SpaceDynamics { .. } => PromptId::P7,
            Fragment::ModelLevelVariables(_) => PromptId::P8,
            Fragment::ModelLevelDynamics { .. } => PromptId::P9,
        }
    }

    /// The bindings of the invocation that produced this fragment.
    pub fn bindings(&self) -> Bindings {
        let mut b = Bindings::new();
        match self {
            Fragment::AgentVariables { agent_set, .. } => {
                b.insert(AGENT_SET_NAME.into(), agent_set.clone());
            }
            Fragment::AgentDynamics {
                agent_set,
                variable,
                ..
            } => {
                b.insert(AGENT_SET_NAME.into(), agent_set.clone());
                b.insert(VAR.into(), variable.clone());
            }
            Fragment::SpaceDynamics { variable, .. }
            | Fragment::ModelLevelDynamics { variable, .. } => {
                b.insert(VAR.into(), variable.clone());
            }
            _ => {}
        }
        b
    }

    /// Names this fragment makes available for fan-out by child stages.
    pub fn fan_out_names(&self) -> Vec<String> {
        match self {
            Fragment::AgentSets(sets) => sets.iter().map(|s| s.name.clone()).collect(),
            Fragment::AgentVariables { variables, .. }
            | Fragment::SpaceVariables(variables)
            | Fragment::ModelLevelVariables(variables) => {
                variables.iter().map(|(n, _)| n.clone()).collect()
            }
            _ => Vec::new(),
        }
    }

    /// The fragment in its stage's normalized JSON structure, so that it can
    /// be validated again.
    pub fn to_payload(&self) -> Value {
        match self {
            Fragment::Purpose(p) => json!({
                MODEL_PURPOSE_KEY: {
                    "full_description": p.full_description,
                    "research_questions": p.research_questions,
                    "system_boundaries": p.system_boundaries,
                    "outcome_variables": p.outcome_variables,
                }
            }),
            Fragment::AgentSets(sets) => {
                let mut map = Map::new();
                for s in sets {
                    map.insert(
                        s.name.clone(),
                        json!({"short_description": s.short_description, "agent_role": s.agent_role}),
                    );
                }
                Value::Object(map)
            }
            Fragment::AgentVariables {
                agent_set,
                variables,
            } => wrap(agent_set, descriptors_payload(variables)),
            Fragment::AgentDynamics {
                agent_set,
                variable,
                dynamics,
            } => wrap(agent_set, wrap(variable, dynamics_payload(dynamics))),
            Fragment::SpaceHeader {
                short_description,
                space_type,
            } => json!({SPACE_KEY: {"short_description": short_description, "type": space_type}}),
            Fragment::SpaceVariables(vars) => wrap(SPACE_KEY, descriptors_payload(vars)),
            Fragment::SpaceDynamics { variable, dynamics } => {
                wrap(SPACE_KEY, wrap(variable, dynamics_payload(dynamics)))
            }
            Fragment::ModelLevelVariables(vars) => wrap(MODEL_LEVEL_KEY, descriptors_payload(vars)),
            Fragment::ModelLevelDynamics { variable, dynamics } => {
                wrap(MODEL_LEVEL_KEY, wrap(variable, dynamics_payload(dynamics)))
            }
        }
    }

    /// Canonical serialized form; two fragments are identical iff these
    /// bytes are.
    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_canonical_string(&self.to_payload())
    }
}

fn wrap(key: &str, inner: Value) -> Value {
    let mut map = Map::new();
    map.insert(key.to_string(), inner);
    Value::Object(map)
}

fn descriptors_payload(vars: &[(String, VariableDescriptor)]) -> Value {
    let mut map = Map::new();
    for (name, d) in vars {
        map.insert(
            name.clone(),
            json!({
                "short_description": d.short_description,
                "data_type": d.raw_data_type,
                "initial_value": d.initial_value,
            }),
        );
    }
    Value::Object(map)
}

fn dynamics_payload(d: &VariableDynamics) -> Value {
    json!({
        "value_boundaries": d.value_boundaries,
        "equation": d.equation,
        EXECUTION_ORDER_KEY: d.raw_execution_order,
        "frequency": d.raw_frequency,
    })
}
