//! JSON configs: loading, schema check, typed parsing with pointer-located
//! errors, and the canonical hash embedded in every output.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u64 = 1;

pub fn load(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config("", format!("invalid JSON (line {}, column {}): {e}", e.line(), e.column())))
}

pub fn check_schema(v: &Value) -> CliResult<()> {
    match v.get("schema") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(CliError::config("/schema", format!("unsupported schema {other}, expected {SCHEMA_VERSION}"))),
        None => Err(CliError::config("/schema", "missing schema version")),
    }
}

fn escape_token(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

/// Deserializes `v`, reporting failures at the JSON pointer of the offending value.
pub fn parse<T: DeserializeOwned>(v: &Value) -> CliResult<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            match seg {
                serde_path_to_error::Segment::Seq { index } => write!(pointer, "/{index}").unwrap(),
                serde_path_to_error::Segment::Map { key } => write!(pointer, "/{}", escape_token(key)).unwrap(),
                serde_path_to_error::Segment::Enum { .. } | serde_path_to_error::Segment::Unknown => {}
            }
        }
        CliError::config(pointer, e.into_inner().to_string())
    })
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical(v: &Value) -> String {
    fn walk(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    walk(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    walk(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut s = String::new();
    walk(v, &mut s);
    s
}

/// First 16 hex digits of the SHA-256 of the canonical form.
pub fn config_hash(v: &Value) -> String {
    let digest = Sha256::digest(canonical(v).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Pointers of every array in `v` except those whose pointer is listed in `native`.
pub fn list_fields(v: &Value, native: &[&str]) -> Vec<String> {
    fn walk(v: &Value, at: String, native: &[&str], out: &mut Vec<String>) {
        match v {
            Value::Array(_) if !native.contains(&at.as_str()) => out.push(at),
            Value::Object(map) => {
                for (k, child) in map {
                    walk(child, format!("{at}/{}", escape_token(k)), native, out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(v, String::new(), native, &mut out);
    out.sort();
    out
}

/// How a training set is cut into contiguous segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segmentation {
    Count(usize),
    Size(usize),
}

/// Resolves the mutually exclusive `segment_count` / `segment_size` fields.
pub fn segmentation(count: Option<usize>, size: Option<usize>) -> CliResult<Segmentation> {
    match (count, size) {
        (Some(_), Some(_)) => Err(CliError::config("/segment_size", "give segment_count or segment_size, not both")),
        (None, None) => Err(CliError::config("/segment_count", "one of segment_count or segment_size is required")),
        (Some(0), None) => Err(CliError::config("/segment_count", "must be at least 1")),
        (None, Some(0)) => Err(CliError::config("/segment_size", "must be at least 1")),
        (Some(k), None) => Ok(Segmentation::Count(k)),
        (None, Some(s)) => Ok(Segmentation::Size(s)),
    }
}

pub fn default_repeats() -> usize {
    3
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": 0.5}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": {"x": 0.5, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(canonical(&a), r#"{"a":{"x":0.5,"y":[1,2]},"b":1}"#);
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        assert_ne!(config_hash(&a), config_hash(&json!({"b": 2, "a": {"x": 0.5, "y": [1, 2]}})));
    }

    #[test]
    fn list_fields_skip_native_lists() {
        let v = json!({"methods": ["gp"], "segment_size": [1, 2], "model": {"kernel": {"params": {"theta2": [3, 4]}}}});
        assert_eq!(
            list_fields(&v, &["/methods"]),
            vec!["/model/kernel/params/theta2".to_string(), "/segment_size".to_string()]
        );
    }

    #[test]
    fn parse_errors_carry_pointer() {
        #[derive(Debug, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Inner {
            #[allow(dead_code)]
            n: usize,
        }
        #[derive(Debug, Deserialize)]
        struct Outer {
            #[allow(dead_code)]
            items: Vec<Inner>,
        }
        let err = parse::<Outer>(&json!({"items": [{"n": 1}, {"n": -3}]})).unwrap_err();
        match err {
            CliError::Config { pointer, .. } => assert_eq!(pointer, "/items/1/n"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn schema_version_is_required() {
        assert!(check_schema(&json!({"schema": 1})).is_ok());
        assert!(check_schema(&json!({"schema": 2})).is_err());
        assert!(check_schema(&json!({})).is_err());
    }
}
