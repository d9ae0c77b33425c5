//! The nine extraction prompts, the fixed system instruction, and
//! placeholder-aware rendering.
//!
//! Template bodies are embedded verbatim. Placeholders are spelled `{NAME}`
//! with `NAME` in upper case; every other brace in a body belongs to the
//! example JSON structure and is left untouched by rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder name → bound value.
pub type Bindings = BTreeMap<String, String>;

pub const AGENT_SET_NAME: &str = "AGENT_SET_NAME";
pub const VAR: &str = "VAR";

/// Tokens that appear in a body but render from another placeholder's
/// binding. The agent-variable prompt names its output wrapper
/// `{AGENT_SET}` while its input is `{AGENT_SET_NAME}`.
const PLACEHOLDER_ALIASES: &[(&str, &str)] = &[("AGENT_SET", AGENT_SET_NAME)];

const P1_BODY: &str = include_str!("templates/P1.txt");
const P2_BODY: &str = include_str!("templates/P2.txt");
const P3_BODY: &str = include_str!("templates/P3.txt");
const P4_BODY: &str = include_str!("templates/P4.txt");
const P5_BODY: &str = include_str!("templates/P5.txt");
const P6_BODY: &str = include_str!("templates/P6.txt");
const P7_BODY: &str = include_str!("templates/P7.txt");
const P8_BODY: &str = include_str!("templates/P8.txt");
const P9_BODY: &str = include_str!("templates/P9.txt");
const INSTRUCTION: &str = include_str!("templates/instruction.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("missing binding for placeholder {0}")]
    MissingBinding(String),
    #[error("binding {0} does not match any placeholder of the template")]
    ExtraBinding(String),
    #[error("invalid value for binding {name}: {reason}")]
    InvalidBindingValue { name: String, reason: &'static str },
}

#[derive(Debug, Error)]
pub enum OverrideError {
    #[error("failed to read prompt override {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("override {path} declares placeholders {found:?}, expected {expected:?}")]
    PlaceholderMismatch {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptId {
    P1,
    P2,
    P3,
    P4,
    P5,
    P6,
    P7,
    P8,
    P9,
}

impl PromptId {
    pub const ALL: [PromptId; 9] = [
        PromptId::P1,
        PromptId::P2,
        PromptId::P3,
        PromptId::P4,
        PromptId::P5,
        PromptId::P6,
        PromptId::P7,
        PromptId::P8,
        PromptId::P9,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::P1 => "P1",
            PromptId::P2 => "P2",
            PromptId::P3 => "P3",
            PromptId::P4 => "P4",
            PromptId::P5 => "P5",
            PromptId::P6 => "P6",
            PromptId::P7 => "P7",
            PromptId::P8 => "P8",
            PromptId::P9 => "P9",
        }
    }

    pub fn theme(self) -> Theme {
        match self {
            PromptId::P1 => Theme::ModelAim,
            PromptId::P2 | PromptId::P3 | PromptId::P4 => Theme::Agents,
            PromptId::P5 | PromptId::P6 | PromptId::P7 => Theme::Environment,
            PromptId::P8 | PromptId::P9 => Theme::ModelExecution,
        }
    }

    /// Placeholders the template requires, in binding-slug order.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptId::P3 => &[AGENT_SET_NAME],
            PromptId::P4 => &[AGENT_SET_NAME, VAR],
            PromptId::P7 | PromptId::P9 => &[VAR],
            _ => &[],
        }
    }

    pub fn schema_ref(self) -> SchemaRef {
        match self {
            PromptId::P1 => SchemaRef::ModelPurpose,
            PromptId::P2 => SchemaRef::AgentSets,
            PromptId::P3 => SchemaRef::AgentVariables,
            PromptId::P4 => SchemaRef::AgentDynamics,
            PromptId::P5 => SchemaRef::SpaceHeader,
            PromptId::P6 => SchemaRef::SpaceVariables,
            PromptId::P7 => SchemaRef::SpaceDynamics,
            PromptId::P8 => SchemaRef::ModelLevelVariables,
            PromptId::P9 => SchemaRef::ModelLevelDynamics,
        }
    }

    pub fn fan_out_source(self) -> Option<FanOutSource> {
        match self {
            PromptId::P3 => Some(FanOutSource::AgentSetNames),
            PromptId::P4 => Some(FanOutSource::AgentVariableNames),
            PromptId::P7 => Some(FanOutSource::SpaceVariableNames),
            PromptId::P9 => Some(FanOutSource::ModelLevelVariableNames),
            _ => None,
        }
    }

    /// The stage whose output this stage fans out over.
    pub fn parent(self) -> Option<PromptId> {
        self.fan_out_source().map(FanOutSource::parent)
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theme {
    ModelAim,
    Agents,
    Environment,
    ModelExecution,
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Theme::ModelAim => "Model Aim",
            Theme::Agents => "Agents",
            Theme::Environment => "Environment",
            Theme::ModelExecution => "Model Execution",
        };
        f.write_str(s)
    }
}

/// Identifier of the output structure a stage is validated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaRef {
    ModelPurpose,
    AgentSets,
    AgentVariables,
    AgentDynamics,
    SpaceHeader,
    SpaceVariables,
    SpaceDynamics,
    ModelLevelVariables,
    ModelLevelDynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanOutSource {
    /// Agent-set names from the P2 output.
    AgentSetNames,
    /// Variable names from a P3 output.
    AgentVariableNames,
    /// Variable names from the P6 output.
    SpaceVariableNames,
    /// Variable names from the P8 output.
    ModelLevelVariableNames,
}

impl FanOutSource {
    pub fn parent(self) -> PromptId {
        match self {
            FanOutSource::AgentSetNames => PromptId::P2,
            FanOutSource::AgentVariableNames => PromptId::P3,
            FanOutSource::SpaceVariableNames => PromptId::P6,
            FanOutSource::ModelLevelVariableNames => PromptId::P8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageDescriptor {
    pub prompt_id: PromptId,
    pub fan_out_source: Option<FanOutSource>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub theme: Theme,
    pub body: String,
    pub placeholders: BTreeSet<String>,
    pub schema_ref: SchemaRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemInstruction {
    pub text: String,
}

/// Immutable set of templates plus the system instruction.
#[derive(Debug, Clone)]
pub struct Catalog {
    templates: Vec<PromptTemplate>,
    instruction: SystemInstruction,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::builtin()
    }
}

impl Catalog {
    pub fn builtin() -> Self {
        let templates = PromptId::ALL
            .into_iter()
            .map(|id| PromptTemplate {
                id,
                theme: id.theme(),
                body: builtin_body(id).to_string(),
                placeholders: id.placeholders().iter().map(|s| s.to_string()).collect(),
                schema_ref: id.schema_ref(),
            })
            .collect();
        Catalog {
            templates,
            instruction: SystemInstruction {
                text: INSTRUCTION.to_string(),
            },
        }
    }

    /// Built-in catalog with any `P1.txt`..`P9.txt` / `instruction.txt`
    /// found in `dir` replacing the corresponding text. Overrides must use
    /// the same placeholders as the template they replace.
    pub fn with_override_dir(dir: &Path) -> Result<Self, OverrideError> {
        let mut catalog = Catalog::builtin();
        for template in &mut catalog.templates {
            let path = dir.join(format!("{}.txt", template.id));
            let Some(body) = read_optional(&path)? else {
                continue;
            };
            let found: BTreeSet<String> = placeholder_tokens(&body)
                .into_iter()
                .map(|(_, name)| canonical_placeholder(name).to_string())
                .collect();
            if found != template.placeholders {
                return Err(OverrideError::PlaceholderMismatch {
                    path,
                    expected: template.placeholders.iter().cloned().collect(),
                    found: found.into_iter().collect(),
                });
            }
            template.body = body;
        }
        if let Some(text) = read_optional(&dir.join("instruction.txt"))? {
            catalog.instruction.text = text;
        }
        Ok(catalog)
    }

    pub fn template(&self, id: PromptId) -> &PromptTemplate {
        &self.templates[id as usize]
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn instruction(&self) -> &SystemInstruction {
        &self.instruction
    }

    pub fn render(&self, id: PromptId, bindings: &Bindings) -> Result<String, PromptError> {
        render_body(self.template(id), bindings)
    }
}

fn builtin_body(id: PromptId) -> &'static str {
    match id {
        PromptId::P1 => P1_BODY,
        PromptId::P2 => P2_BODY,
        PromptId::P3 => P3_BODY,
        PromptId::P4 => P4_BODY,
        PromptId::P5 => P5_BODY,
        PromptId::P6 => P6_BODY,
        PromptId::P7 => P7_BODY,
        PromptId::P8 => P8_BODY,
        PromptId::P9 => P9_BODY,
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, OverrideError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(text.trim_end().replace("\r\n", "\n"))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(OverrideError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

/// Renders a prompt from the built-in catalog.
pub fn render(id: PromptId, bindings: &Bindings) -> Result<String, PromptError> {
    render_body(Catalog::builtin().template(id), bindings)
}

pub fn expected_schema(id: PromptId) -> SchemaRef {
    id.schema_ref()
}

/// The nine stages in execution-theme order.
pub fn list_stages() -> Vec<StageDescriptor> {
    PromptId::ALL
        .into_iter()
        .map(|prompt_id| StageDescriptor {
            prompt_id,
            fan_out_source: prompt_id.fan_out_source(),
        })
        .collect()
}

pub fn system_instruction() -> &'static str {
    INSTRUCTION
}

/// The built-in verbatim body of a template.
pub fn builtin_template(id: PromptId) -> &'static str {
    builtin_body(id)
}

fn render_body(template: &PromptTemplate, bindings: &Bindings) -> Result<String, PromptError> {
    for name in &template.placeholders {
        let value = bindings
            .get(name)
            .ok_or_else(|| PromptError::MissingBinding(name.clone()))?;
        if value.trim().is_empty() {
            return Err(PromptError::InvalidBindingValue {
                name: name.clone(),
                reason: "value is empty",
            });
        }
        if value.contains(['{', '}']) {
            return Err(PromptError::InvalidBindingValue {
                name: name.clone(),
                reason: "value contains a brace",
            });
        }
    }
    if let Some(extra) = bindings
        .keys()
        .find(|k| !template.placeholders.contains(*k))
    {
        return Err(PromptError::ExtraBinding(extra.clone()));
    }

    let body = &template.body;
    let mut out = String::with_capacity(body.len() + 64);
    let mut cursor = 0;
    for (range, name) in placeholder_tokens(body) {
        let Some(value) = bindings.get(canonical_placeholder(name)) else {
            // An upper-case brace token that is not a declared placeholder
            // is ordinary template text.
            continue;
        };
        out.push_str(&body[cursor..range.start]);
        out.push_str(value);
        cursor = range.end;
    }
    out.push_str(&body[cursor..]);
    Ok(out)
}

fn canonical_placeholder(name: &str) -> &str {
    PLACEHOLDER_ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map(|(_, canonical)| *canonical)
        .unwrap_or(name)
}

/// Byte ranges and names of every `{NAME}` token in `body`, where `NAME` is
/// an upper-case identifier.
pub fn placeholder_tokens(body: &str) -> Vec<(Range<usize>, &str)> {
    let bytes = body.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len()
                && (bytes[j].is_ascii_uppercase() || bytes[j] == b'_' || bytes[j].is_ascii_digit())
            {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b'}' && bytes[start].is_ascii_uppercase()
            {
                tokens.push((i..j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    tokens
}
