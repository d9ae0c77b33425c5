//! Recovery of a JSON object from raw model output, and key-vocabulary
//! normalization per stage.
//!
//! Model replies often imitate the prompt's example structure, which uses
//! single quotes, or wrap the object in prose and code fences. Recovery is
//! a fixed sequence of repairs followed by a strict parse; it never adds a
//! key or leaf value that is not present in the raw text.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::prompts::PromptId;

pub type JsonValue = Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("no balanced JSON object found in model output")]
    NoJsonFound { raw: String },
    #[error("JSON object found but could not be repaired: {reason}")]
    UnrecoverableJson { raw: String, reason: String },
    #[error("keys normalize to `{key}` with conflicting values")]
    DuplicateAfterNormalization { key: String },
    #[error("expected a JSON object")]
    NotAnObject,
}

impl RecoveryError {
    pub fn code(&self) -> &'static str {
        match self {
            RecoveryError::NoJsonFound { .. } => "no_json_found",
            RecoveryError::UnrecoverableJson { .. } => "unrecoverable_json",
            RecoveryError::DuplicateAfterNormalization { .. } => "duplicate_after_normalization",
            RecoveryError::NotAnObject => "not_an_object",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairTag {
    StrippedProse,
    StrippedCodeFence,
    SingleToDoubleQuotes,
    RemovedTrailingComma,
    KeyAlias,
    PlaceholderEcho,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub repairs_applied: Vec<RepairTag>,
    /// Byte range of the extracted object within the raw text.
    pub original_span: Range<usize>,
}

impl RecoveryReport {
    fn tag(&mut self, tag: RepairTag) {
        if !self.repairs_applied.contains(&tag) {
            self.repairs_applied.push(tag);
        }
    }

    pub fn is_clean(&self) -> bool {
        self.repairs_applied.is_empty()
    }
}

/// Uppercase tokens from the prompts' example structures. A leaf equal to
/// one of these carries no information.
const PLACEHOLDER_TOKENS: &[&str] = &[
    "Full_DESCRIPTION",
    "FULL_DESCRIPTION",
    "SHORT_DESCRIPTION",
    "SHORT_DESCRIPTION_AGENT_ROLE",
    "DATA_TYPE",
    "INITIAL_VALUE",
    "VALUE_BOUNDARIES",
    "EQUATION",
    "ORDER_NUMBER",
    "EXCUTION_ORDER",
    "EXECUTION_ORDER",
    "FREQUENCY",
    "TYPE",
];

pub fn is_placeholder_echo(s: &str) -> bool {
    if PLACEHOLDER_TOKENS.contains(&s) {
        return true;
    }
    s.strip_prefix("RESEARCH_QUESTION_")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Extracts the first recoverable top-level object from `raw`.
pub fn extract_json(raw: &str) -> Result<(JsonValue, RecoveryReport), RecoveryError> {
    let mut report = RecoveryReport::default();

    let region = match fenced_block(raw) {
        Some(block) => {
            report.tag(RepairTag::StrippedCodeFence);
            if has_content_outside(raw, &block.outer) {
                report.tag(RepairTag::StrippedProse);
            }
            block.inner
        }
        None => 0..raw.len(),
    };

    let mut found_region = false;
    let mut last_reason = String::new();
    let mut pos = region.start;
    while let Some(offset) = raw[pos..region.end].find('{') {
        let start = pos + offset;
        let Some(end) = balanced_end(&raw[..region.end], start) else {
            pos = start + 1;
            continue;
        };
        found_region = true;
        let candidate = &raw[start..end];
        let rewritten = rewrite(candidate);
        match serde_json::from_str::<Value>(&rewritten.text) {
            Ok(value) => {
                if has_content_outside(
                    &raw[region.clone()],
                    &(start - region.start..end - region.start),
                ) {
                    report.tag(RepairTag::StrippedProse);
                }
                if rewritten.single_quotes {
                    report.tag(RepairTag::SingleToDoubleQuotes);
                }
                if rewritten.trailing_commas {
                    report.tag(RepairTag::RemovedTrailingComma);
                }
                let mut value = value;
                if rewritten.bare_placeholders | scrub_placeholders(&mut value) {
                    report.tag(RepairTag::PlaceholderEcho);
                }
                report.original_span = start..end;
                return Ok((value, report));
            }
            Err(e) => {
                last_reason = e.to_string();
                pos = end;
            }
        }
    }

    if found_region {
        Err(RecoveryError::UnrecoverableJson {
            raw: raw.to_string(),
            reason: last_reason,
        })
    } else {
        Err(RecoveryError::NoJsonFound {
            raw: raw.to_string(),
        })
    }
}

/// [`extract_json`] followed by [`normalize_keys`] for `stage`, with key
/// aliasing recorded in the report.
pub fn recover_stage_output(
    raw: &str,
    stage: PromptId,
) -> Result<(JsonValue, RecoveryReport), RecoveryError> {
    let (value, mut report) = extract_json(raw)?;
    let normalized = normalize_keys(&value, stage)?;
    if normalized.aliased {
        report.tag(RepairTag::KeyAlias);
    }
    Ok((normalized.value, report))
}

struct FencedBlock {
    /// From the opening fence to the end of the closing fence.
    outer: Range<usize>,
    inner: Range<usize>,
}

fn fenced_block(raw: &str) -> Option<FencedBlock> {
    let mut search = 0;
    while let Some(rel) = raw[search..].find("```") {
        let open = search + rel;
        let after = open + 3;
        let content_start = after + raw[after..].find('\n')? + 1;
        let close_rel = raw[content_start..].find("```")?;
        let close = content_start + close_rel;
        if raw[content_start..close].contains('{') {
            return Some(FencedBlock {
                outer: open..close + 3,
                inner: content_start..close,
            });
        }
        search = close + 3;
    }
    None
}

fn has_content_outside(text: &str, span: &Range<usize>) -> bool {
    !text[..span.start].trim().is_empty() || !text[span.end..].trim().is_empty()
}

/// Quote-aware lexer shared by brace matching and rewriting.
struct Lexer {
    chars: Vec<(usize, char)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Quote {
    Double,
    Single,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer {
            chars: src.char_indices().collect(),
        }
    }

    fn next_significant(&self, from: usize) -> Option<char> {
        self.chars[from..]
            .iter()
            .map(|(_, c)| *c)
            .find(|c| !c.is_whitespace())
    }

    /// Whether a quote at index `i` opens a single-quoted string, judged by
    /// the preceding significant character.
    fn opens_single(last_sig: Option<char>) -> bool {
        matches!(last_sig, None | Some('{' | '[' | ',' | ':'))
    }

    /// Whether the `'` at index `i` closes a single-quoted string rather than
    /// being an apostrophe inside it.
    fn closes_single(&self, i: usize) -> bool {
        matches!(
            self.next_significant(i + 1),
            None | Some(',' | '}' | ']' | ':')
        )
    }
}

/// Byte offset one past the brace that closes the `{` at `start`.
fn balanced_end(src: &str, start: usize) -> Option<usize> {
    let sub = &src[start..];
    let lx = Lexer::new(sub);
    let mut depth = 0usize;
    let mut quote: Option<Quote> = None;
    let mut escaped = false;
    let mut last_sig: Option<char> = None;
    for (idx, &(off, c)) in lx.chars.iter().enumerate() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if q == Quote::Double && c == '"' {
                    quote = None;
                    last_sig = Some('"');
                } else if q == Quote::Single && c == '\'' && lx.closes_single(idx) {
                    quote = None;
                    last_sig = Some('\'');
                }
            }
            None => match c {
                '"' => quote = Some(Quote::Double),
                '\'' if Lexer::opens_single(last_sig) => quote = Some(Quote::Single),
                '{' | '[' => {
                    depth += 1;
                    last_sig = Some(c);
                }
                '}' | ']' => {
                    depth = depth.checked_sub(1)?;
                    if depth == 0 {
                        return (c == '}').then_some(start + off + 1);
                    }
                    last_sig = Some(c);
                }
                c if c.is_whitespace() => {}
                c => last_sig = Some(c),
            },
        }
    }
    None
}

struct Rewritten {
    text: String,
    single_quotes: bool,
    trailing_commas: bool,
    bare_placeholders: bool,
}

/// Converts single-quoted strings to double-quoted ones, drops trailing
/// commas and quotes bare placeholder identifiers in value position.
/// Double-quoted strings are copied untouched.
fn rewrite(src: &str) -> Rewritten {
    let lx = Lexer::new(src);
    let mut out = Rewritten {
        text: String::with_capacity(src.len() + 16),
        single_quotes: false,
        trailing_commas: false,
        bare_placeholders: false,
    };
    let mut containers: Vec<char> = Vec::new();
    let mut last_sig: Option<char> = None;
    let mut i = 0;
    while i < lx.chars.len() {
        let (off, c) = lx.chars[i];
        match c {
            '"' => {
                let end = scan_double(&lx, i);
                let stop = lx.chars.get(end).map_or(src.len(), |(o, _)| *o);
                out.text.push_str(&src[off..stop]);
                last_sig = Some('"');
                i = end;
                continue;
            }
            '\'' if Lexer::opens_single(last_sig) => {
                out.single_quotes = true;
                out.text.push('"');
                i += 1;
                while i < lx.chars.len() {
                    let (_, ch) = lx.chars[i];
                    match ch {
                        '\\' if lx.chars.get(i + 1).map(|(_, n)| *n) == Some('\'') => {
                            out.text.push('\'');
                            i += 2;
                        }
                        '\\' => {
                            out.text.push('\\');
                            if let Some((_, n)) = lx.chars.get(i + 1) {
                                out.text.push(*n);
                            }
                            i += 2;
                        }
                        '\'' if lx.closes_single(i) => {
                            i += 1;
                            break;
                        }
                        '"' => {
                            out.text.push_str("\\\"");
                            i += 1;
                        }
                        ch => {
                            out.text.push(ch);
                            i += 1;
                        }
                    }
                }
                out.text.push('"');
                last_sig = Some('"');
                continue;
            }
            ',' if matches!(lx.next_significant(i + 1), Some('}' | ']')) => {
                out.trailing_commas = true;
                i += 1;
                continue;
            }
            '{' | '[' => containers.push(c),
            '}' | ']' => {
                containers.pop();
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < lx.chars.len()
                    && (lx.chars[j].1.is_ascii_alphanumeric() || lx.chars[j].1 == '_')
                {
                    j += 1;
                }
                let stop = lx.chars.get(j).map_or(src.len(), |(o, _)| *o);
                let word = &src[off..stop];
                let value_position = last_sig == Some(':')
                    || (containers.last() == Some(&'[') && matches!(last_sig, Some('[' | ',')));
                if value_position && is_placeholder_echo(word) {
                    // Quoted, so that the scrub treats it like a quoted echo.
                    out.text.push('"');
                    out.text.push_str(word);
                    out.text.push('"');
                    out.bare_placeholders = true;
                } else {
                    out.text.push_str(word);
                }
                last_sig = Some('a');
                i = j;
                continue;
            }
            _ => {}
        }
        out.text.push(c);
        if !c.is_whitespace() {
            last_sig = Some(c);
        }
        i += 1;
    }
    out
}

/// Index one past the closing quote of the double-quoted string opening at `i`.
fn scan_double(lx: &Lexer, i: usize) -> usize {
    let mut j = i + 1;
    let mut escaped = false;
    while j < lx.chars.len() {
        let c = lx.chars[j].1;
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '"' {
            return j + 1;
        }
        j += 1;
    }
    j
}

/// Maps quoted placeholder echoes to null (object members) or drops them
/// (array elements). Returns whether anything changed.
fn scrub_placeholders(value: &mut Value) -> bool {
    match value {
        Value::Object(map) => {
            let mut changed = false;
            for v in map.values_mut() {
                if v.as_str().is_some_and(is_placeholder_echo) {
                    *v = Value::Null;
                    changed = true;
                } else {
                    changed |= scrub_placeholders(v);
                }
            }
            changed
        }
        Value::Array(items) => {
            let before = items.len();
            items.retain(|v| !v.as_str().is_some_and(is_placeholder_echo));
            let mut changed = items.len() != before;
            for v in items.iter_mut() {
                changed |= scrub_placeholders(v);
            }
            changed
        }
        _ => false,
    }
}

pub const MODEL_PURPOSE_KEY: &str = "Model_Purpose";
pub const SPACE_KEY: &str = "SPACE";
pub const MODEL_LEVEL_KEY: &str = "Model-Level";
pub const EXECUTION_ORDER_KEY: &str = "execution_order";

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub value: JsonValue,
    /// Whether any key was rewritten.
    pub aliased: bool,
}

fn fold_key(key: &str) -> String {
    key.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn theme_key(stage: PromptId) -> Option<&'static str> {
    match stage {
        PromptId::P1 => Some(MODEL_PURPOSE_KEY),
        PromptId::P5 | PromptId::P6 | PromptId::P7 => Some(SPACE_KEY),
        PromptId::P8 | PromptId::P9 => Some(MODEL_LEVEL_KEY),
        _ => None,
    }
}

fn has_dynamics(stage: PromptId) -> bool {
    matches!(stage, PromptId::P4 | PromptId::P7 | PromptId::P9)
}

/// Rewrites stage-specific key aliases to canonical names.
///
/// Top-level wrapper keys are matched ignoring case and punctuation against
/// the stage's theme key. In the per-variable dynamics stages, the
/// execution-order field (`order_number`, `excution_order`,
/// `execution_order`) becomes `execution_order` in every record below the
/// wrapper and variable levels.
pub fn normalize_keys(value: &JsonValue, stage: PromptId) -> Result<Normalized, RecoveryError> {
    let Value::Object(top) = value else {
        return Err(RecoveryError::NotAnObject);
    };
    let mut aliased = false;
    let theme = theme_key(stage);
    let mut out = Map::new();
    for (key, child) in top {
        let canonical = match theme {
            Some(theme) if fold_key(key) == fold_key(theme) => theme.to_string(),
            _ => key.clone(),
        };
        aliased |= canonical != *key;
        let child = if has_dynamics(stage) {
            normalize_order_fields(child, 1, &mut aliased)?
        } else {
            child.clone()
        };
        insert_unique(&mut out, canonical, child)?;
    }
    Ok(Normalized {
        value: Value::Object(out),
        aliased,
    })
}

fn normalize_order_fields(
    value: &Value,
    depth: usize,
    aliased: &mut bool,
) -> Result<Value, RecoveryError> {
    match value {
        Value::Object(map) => {
            let mut out = Map::new();
            for (key, child) in map {
                let canonical = if depth >= 2 && is_order_alias(key) {
                    EXECUTION_ORDER_KEY.to_string()
                } else {
                    key.clone()
                };
                *aliased |= canonical != *key;
                let child = normalize_order_fields(child, depth + 1, aliased)?;
                insert_unique(&mut out, canonical, child)?;
            }
            Ok(Value::Object(out))
        }
        other => Ok(other.clone()),
    }
}

fn is_order_alias(key: &str) -> bool {
    matches!(
        fold_key(key).as_str(),
        "ordernumber" | "excutionorder" | "executionorder"
    )
}

fn insert_unique(
    map: &mut Map<String, Value>,
    key: String,
    value: Value,
) -> Result<(), RecoveryError> {
    match map.get(&key) {
        Some(existing) if *existing != value => {
            Err(RecoveryError::DuplicateAfterNormalization { key })
        }
        Some(_) => Ok(()),
        None => {
            map.insert(key, value);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strict_input_needs_no_repairs() {
        let (v, r) = extract_json(r#"{"a": 1}"#).unwrap();
        assert_eq!(v, json!({"a": 1}));
        assert!(r.is_clean());
        assert_eq!(r.original_span, 0..8);
    }

    #[test]
    fn single_quoted_structure() {
        let (v, r) = extract_json("{'Space': {'type': 'grid'}}").unwrap();
        assert_eq!(v, json!({"Space": {"type": "grid"}}));
        assert_eq!(r.repairs_applied, vec![RepairTag::SingleToDoubleQuotes]);
    }

    #[test]
    fn fenced_block_with_prose() {
        let raw = "Here is the result:\n```json\n{\"a\":1}\n```\nHope this helps";
        let (v, r) = extract_json(raw).unwrap();
        assert_eq!(v, json!({"a": 1}));
        assert!(r.repairs_applied.contains(&RepairTag::StrippedCodeFence));
        assert!(r.repairs_applied.contains(&RepairTag::StrippedProse));
        assert_eq!(&raw[r.original_span.clone()], "{\"a\":1}");
    }

    #[test]
    fn apostrophes_survive_quote_repair() {
        let (v, _) = extract_json(r#"{'role': "the agent's role", 'x': 'wolf's den'}"#).unwrap();
        assert_eq!(v["role"], "the agent's role");
        assert_eq!(v["x"], "wolf's den");
    }

    #[test]
    fn double_quote_inside_single_quoted_string_is_escaped() {
        let (v, _) = extract_json(r#"{'eq': 'say "hi"'}"#).unwrap();
        assert_eq!(v["eq"], "say \"hi\"");
    }

    #[test]
    fn trailing_commas_removed() {
        let (v, r) = extract_json(r#"{"a": [1, 2,], "b": {"c": 3,},}"#).unwrap();
        assert_eq!(v, json!({"a": [1, 2], "b": {"c": 3}}));
        assert_eq!(r.repairs_applied, vec![RepairTag::RemovedTrailingComma]);
    }

    #[test]
    fn placeholder_echoes_become_null() {
        let (v, r) = extract_json(
            r#"{"x": {"equation": "EQUATION", "frequency": FREQUENCY, "qs": ["RESEARCH_QUESTION_1", "Why?"]}}"#,
        )
        .unwrap();
        assert_eq!(
            v,
            json!({"x": {"equation": null, "frequency": null, "qs": ["Why?"]}})
        );
        assert_eq!(r.repairs_applied, vec![RepairTag::PlaceholderEcho]);
    }

    #[test]
    fn literals_are_not_placeholders() {
        let (v, r) = extract_json(r#"{"a": true, "b": null, "c": false}"#).unwrap();
        assert_eq!(v, json!({"a": true, "b": null, "c": false}));
        assert!(r.is_clean());
    }

    #[test]
    fn braces_inside_strings_do_not_end_the_object() {
        let (v, _) = extract_json(r#"prefix {"eq": "set {x} to }"} suffix"#).unwrap();
        assert_eq!(v, json!({"eq": "set {x} to }"}));
    }

    #[test]
    fn skips_unparseable_region_and_takes_next() {
        let raw = "Consider {this, that} first. {\"a\": 1}";
        let (v, r) = extract_json(raw).unwrap();
        assert_eq!(v, json!({"a": 1}));
        assert!(r.repairs_applied.contains(&RepairTag::StrippedProse));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            extract_json("no json here"),
            Err(RecoveryError::NoJsonFound { .. })
        ));
        assert!(matches!(
            extract_json("{ unbalanced"),
            Err(RecoveryError::NoJsonFound { .. })
        ));
        match extract_json("{not json at all}") {
            Err(RecoveryError::UnrecoverableJson { raw, .. }) => {
                assert_eq!(raw, "{not json at all}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn order_alias_is_canonicalized() {
        let v = json!({"SPACE": {"pcolor": {"excution_order": 2, "equation": "x"}}});
        let n = normalize_keys(&v, PromptId::P7).unwrap();
        assert!(n.aliased);
        assert_eq!(
            n.value,
            json!({"SPACE": {"pcolor": {"execution_order": 2, "equation": "x"}}})
        );
    }

    #[test]
    fn conflicting_aliases_are_rejected() {
        let v = json!({"Wolves": {"energy": {"order_number": 1, "excution_order": 2}}});
        assert_eq!(
            normalize_keys(&v, PromptId::P4),
            Err(RecoveryError::DuplicateAfterNormalization {
                key: "execution_order".into()
            })
        );
        let same = json!({"Wolves": {"energy": {"order_number": 1, "excution_order": 1}}});
        assert!(normalize_keys(&same, PromptId::P4).is_ok());
    }

    #[test]
    fn theme_keys_follow_stage() {
        let n = normalize_keys(&json!({"Space": {"type": "grid"}}), PromptId::P5).unwrap();
        assert_eq!(n.value, json!({"SPACE": {"type": "grid"}}));
        let n = normalize_keys(&json!({"model_level": {}}), PromptId::P8).unwrap();
        assert_eq!(n.value, json!({"Model-Level": {}}));
        let n = normalize_keys(&json!({"MODEL PURPOSE": {}}), PromptId::P1).unwrap();
        assert_eq!(n.value, json!({"Model_Purpose": {}}));
        // agent-set names are never rewritten
        let n = normalize_keys(&json!({"Space": {}}), PromptId::P2).unwrap();
        assert!(!n.aliased);
    }

    #[test]
    fn variable_named_like_an_alias_is_untouched() {
        let v = json!({"Model-Level": {"order_number": {"order_number": 3}}});
        let n = normalize_keys(&v, PromptId::P9).unwrap();
        assert_eq!(
            n.value,
            json!({"Model-Level": {"order_number": {"execution_order": 3}}})
        );
    }

    #[test]
    fn canonical_object_unchanged() {
        let v = json!({"Model-Level": {"ticks": {"execution_order": 0}}});
        let n = normalize_keys(&v, PromptId::P9).unwrap();
        assert!(!n.aliased);
        assert_eq!(n.value, v);
    }

    #[test]
    fn stage_recovery_tags_key_alias() {
        let (v, r) = recover_stage_output("{'Space': {'type': 'grid'}}", PromptId::P5).unwrap();
        assert_eq!(v, json!({"SPACE": {"type": "grid"}}));
        assert!(r.repairs_applied.contains(&RepairTag::KeyAlias));
        assert!(r.repairs_applied.contains(&RepairTag::SingleToDoubleQuotes));
    }
}
