//! Layered run configuration: defaults, then a JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "AVALIGN_OUT";

/// Common long-form spellings accepted only as suggestion targets.
const ALIASES: &[(&str, &str)] = &[
    ("learning_rate", "lr"),
    ("batchsize", "batch_size"),
    ("num_epochs", "epochs"),
    ("temperature", "init_temperature"),
];

/// `$AVALIGN_OUT` if set, else `runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Closest known key to `key`, if any is reasonably close.
pub fn suggest(key: &str, known: &[String]) -> Option<String> {
    let mut best: Option<(f64, String)> = None;
    let mut consider = |candidate: &str, target: &str| {
        let score = strsim::normalized_damerau_levenshtein(key, candidate);
        if score >= 0.5 && best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, target.to_string()));
        }
    };
    for k in known {
        consider(k, k);
    }
    for (alias, target) in ALIASES {
        if known.iter().any(|k| k == target) {
            consider(alias, target);
        }
    }
    best.map(|(_, k)| k)
}

fn merge_layer(base: &mut Map<String, Value>, layer: Map<String, Value>, origin: &str) -> Result<()> {
    let known: Vec<String> = base.keys().cloned().collect();
    for (k, v) in layer {
        match base.get_mut(&k) {
            Some(Value::Object(inner)) if v.is_object() => {
                let Value::Object(v) = v else { unreachable!() };
                merge_layer(inner, v, &format!("{origin} ({k})"))?;
            }
            Some(slot) => *slot = v,
            None => {
                let hint = suggest(&k, &known)
                    .map(|s| format!("; did you mean \"{s}\"?"))
                    .unwrap_or_default();
                return Err(Error::Config(format!("unknown key \"{k}\" in {origin}{hint}")));
            }
        }
    }
    Ok(())
}

/// Expands dotted keys (`spec.overlap`) into nested objects.
fn nest_flags(flags: &[(String, Value)]) -> Map<String, Value> {
    let mut out = Map::new();
    for (key, value) in flags {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().unwrap_or_default();
        let mut cur = &mut out;
        for p in parts {
            let slot = cur
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !slot.is_object() {
                *slot = Value::Object(Map::new());
            }
            let Value::Object(m) = slot else { unreachable!() };
            cur = m;
        }
        cur.insert(last.to_string(), value.clone());
    }
    out
}

fn as_object(v: Value, origin: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(Error::Config(format!(
            "{origin} must be a JSON object, got {other}"
        ))),
    }
}

/// Reads a JSON object from `path`. An empty file is an empty object.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Map::new());
    }
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    as_object(v, &path.display().to_string())
}

/// Parses `key=value`; the value is read as JSON when possible, otherwise
/// as a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override \"{s}\" is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Applies `file` and then `flags` on top of `defaults`. Nested objects merge
/// key by key and flag keys may use dotted paths. Unknown keys in either
/// layer are rejected with the closest known key as a suggestion.
pub fn resolve_config<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    flags: &[(String, Value)],
) -> Result<T> {
    let mut merged = as_object(serde_json::to_value(defaults)?, "defaults")?;
    if let Some(path) = file {
        merge_layer(&mut merged, read_config_file(path)?, &path.display().to_string())?;
    }
    merge_layer(&mut merged, nest_flags(flags), "flags")?;
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_resolved<T: Serialize>(config: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
