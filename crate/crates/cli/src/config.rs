//! `--config FILE`: a JSON object whose keys are flag names (`test-fraction`
//! or `test_fraction`) is turned into extra arguments appended after the
//! command line. Flags already given on the command line are skipped.

use serde_json::Value;

use crate::{CliError, Result};

fn config_path(argv: &[String]) -> Result<Option<String>> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned().map(Some).ok_or_else(|| CliError::Usage("--config needs a file".into()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some(p.to_string()));
        }
    }
    Ok(None)
}

fn given(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CliError::Usage(format!("config key `{key}` must be a string, number or boolean"))),
    }
}

pub fn merge(mut argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv)? else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let Value::Object(map) = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {path}: {e}")))? else {
        return Err(CliError::Usage(format!("config {path}: expected a JSON object")));
    };
    let mut extra = Vec::new();
    for (key, value) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(CliError::Usage("config files cannot nest --config".into()));
        }
        if given(&argv, &flag) {
            continue;
        }
        match value {
            Value::Bool(true) => extra.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for v in items {
                    extra.push(flag.clone());
                    extra.push(scalar(key, v)?);
                }
            }
            v => {
                extra.push(flag);
                extra.push(scalar(key, v)?);
            }
        }
    }
    argv.extend(extra);
    Ok(argv)
}
