//! JSON config loading with dotted-path overrides.

use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{coded, Code};

/// The config file as a JSON object, or an empty object without a file.
pub fn load(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| coded(Code::ConfigRead, format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| coded(Code::Schema, format!("config {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(coded(Code::Schema, format!("config {} must be a JSON object", path.display())));
    }
    Ok(v)
}

/// Sets `value` at a dotted `key`, creating intermediate objects.
pub fn set(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(coded(Code::Usage, format!("bad override key '{key}'")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(coded(Code::Schema, format!("override '{key}': '{}' is not an object", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("key has at least one part")
}

/// Applies one `key=value` override. The value is parsed as JSON and taken
/// as a plain string if that fails.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(coded(Code::Usage, format!("override '{spec}' is not key=value")));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set(root, key.trim(), value)
}

/// Deserializes the resolved config; unknown keys and type errors are schema
/// violations.
pub fn resolve<T: DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| coded(Code::Schema, format!("{what} config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_overrides() {
        let mut v = json!({"train": {"adam": {"lr": 0.1}}});
        apply_override(&mut v, "train.adam.lr=0.001").unwrap();
        apply_override(&mut v, "world.kind=dsprites-lite").unwrap();
        apply_override(&mut v, "seeds=[1,2]").unwrap();
        assert_eq!(v, json!({"train": {"adam": {"lr": 0.001}}, "world": {"kind": "dsprites-lite"}, "seeds": [1, 2]}));
    }

    #[test]
    fn bad_overrides() {
        let mut v = json!({"steps": 3});
        assert!(apply_override(&mut v, "steps.x=1").is_err());
        assert!(apply_override(&mut v, "noequals").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }
}
