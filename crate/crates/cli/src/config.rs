//! Merging an `OLFALIGN_CONFIG` JSON file into the argument list.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use serde_json::Value;

/// Turns the config's keys into flags placed right after the subcommand,
/// skipping any flag the command line already sets.
pub fn merge(argv: Vec<OsString>, config: &Path) -> Result<Vec<OsString>, String> {
    let raw = fs::read(config).map_err(|e| format!("{}: {e}", config.display()))?;
    let value: Value = serde_json::from_slice(&raw).map_err(|e| format!("{}: {e}", config.display()))?;
    let Value::Object(map) = value else {
        return Err(format!("{}: config must be a JSON object", config.display()));
    };
    // First positional token after the program name is the subcommand.
    let Some(sub) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(argv);
    };
    let sub = sub + 1;
    let given: Vec<String> = argv[sub + 1..].iter().map(|a| a.to_string_lossy().into_owned()).collect();

    let mut injected = Vec::new();
    for (key, value) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        if given.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let scalar = |v: &Value| -> Result<String, String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(format!("config key {key:?}: unsupported value {v}")),
            }
        };
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => injected.push(flag),
            Value::Array(items) => {
                for item in items {
                    injected.push(flag.clone());
                    injected.push(scalar(item)?);
                }
            }
            other => {
                injected.push(flag);
                injected.push(scalar(other)?);
            }
        }
    }
    let mut out: Vec<OsString> = argv[..=sub].to_vec();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend(argv[sub + 1..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(items: &[&str]) -> Vec<OsString> {
        items.iter().map(OsString::from).collect()
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 3, "repetitions": 4, "loo": true, "pairs": ["a.csv", "b.csv"], "angle": false}"#).unwrap();
        let merged = merge(argv(&["olfalign", "-v", "rsa", "--seed", "9"]), &path).unwrap();
        let merged: Vec<String> = merged.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(
            merged,
            ["olfalign", "-v", "rsa", "--loo", "--pairs", "a.csv", "--pairs", "b.csv", "--repetitions", "4", "--seed", "9"]
        );
    }

    #[test]
    fn rejects_non_objects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, "[1]").unwrap();
        assert!(merge(argv(&["olfalign", "rsa"]), &path).is_err());
    }
}
