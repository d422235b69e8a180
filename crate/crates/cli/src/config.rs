//! JSON config files with `--set key.path=value` overrides.
//!
//! The defaults of a config type are serialized to a JSON tree, the file is
//! merged over it, then each override replaces one existing leaf. Unknown
//! keys are rejected at every stage.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(CliError::Config(format!("unknown config key `{sub}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set(tree: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    // Bare words that are not valid JSON are taken as strings.
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *tree;
    for part in key.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?;
    }
    *slot = value;
    Ok(())
}

pub fn load<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: &[String]) -> Result<T, CliError> {
    let mut tree = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
        merge(&mut tree, patch, "")?;
    }
    for o in overrides {
        set(&mut tree, o)?;
    }
    serde_json::from_value(tree).map_err(|e| CliError::Config(e.to_string()))
}
