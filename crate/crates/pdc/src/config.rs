//! Layered configuration: defaults, then a JSON file, then command-line
//! overrides addressed by dotted key paths.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Failure, Result};

fn merge(base: &mut Value, over: Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| Failure::Config(format!("unknown config key {sub}")))?;
                merge(slot, v, &sub)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Sets `key` (dotted path) in `root`; the key must already exist.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut nested = value;
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), nested);
        nested = Value::Object(m);
    }
    merge(root, nested, "")
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Failure::Config(format!("expected key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Defaults of `T`, overlaid with the JSON file (if any) and then `overrides`.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<T> {
    let mut root = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if !v.is_object() {
            return Err(Failure::Config(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut root, v, "")?;
    }
    for (k, v) in overrides {
        set_path(&mut root, k, v.clone())?;
    }
    serde_json::from_value(root).map_err(|e| Failure::Config(e.to_string()))
}
