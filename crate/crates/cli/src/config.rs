//! Optional TOML config files. Keys mirror the long flag names with
//! underscores; a `[<command>]` table takes precedence over top-level keys.
//! Flags given on the command line override the file.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn file_table(path: &Path, section: &str) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let doc: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let value = serde_json::to_value(doc).map_err(|e| CliError::Input(e.to_string()))?;
    let Value::Object(mut top) = value else {
        unreachable!("a TOML document is a table")
    };
    let mut out = Map::new();
    let nested = top.remove(section);
    for (k, v) in top {
        if !v.is_object() {
            out.insert(k, v);
        }
    }
    if let Some(Value::Object(sec)) = nested {
        out.extend(sec);
    }
    Ok(out)
}

/// Overlays the flags that were given onto the config file.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: Option<&Path>,
    section: &str,
) -> Result<T, CliError> {
    let mut merged = match file {
        Some(p) => file_table(p, section)?,
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Input(format!("config: {e}")))
}
