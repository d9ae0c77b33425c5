//! Canonical JSON text: UTF-8, two-space indentation, object keys sorted,
//! trailing newline.

use serde::Serialize;
use serde_json::{Map, Value};

pub fn sort_keys(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sort_keys(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

pub fn to_canonical_string(value: &Value) -> String {
    render(&sort_keys(value))
}

/// Like [`to_canonical_string`] but with the listed top-level keys first,
/// in the given order. Remaining top-level keys follow sorted.
pub fn to_canonical_string_with_order(value: &Value, top: &[&str]) -> String {
    let sorted = sort_keys(value);
    let Value::Object(map) = &sorted else {
        return render(&sorted);
    };
    let mut out = Map::new();
    for key in top {
        if let Some(v) = map.get(*key) {
            out.insert(key.to_string(), v.clone());
        }
    }
    for (k, v) in map {
        if !out.contains_key(k) {
            out.insert(k.clone(), v.clone());
        }
    }
    render(&Value::Object(out))
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    to_canonical_string(&serde_json::to_value(value).expect("serializable value"))
}

fn render(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}
