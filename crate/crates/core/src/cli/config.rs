//! `--config run.toml` support.
//!
//! The file mirrors the flags: top-level keys and keys of a table named after
//! the subcommand become flags (`conf_threshold = 0.3` becomes
//! `--conf-threshold 0.3`, single-letter keys become `-k 5`). A top-level
//! `command = "search"` supplies the subcommand when argv has none. Flags
//! given on the command line take precedence over the file.

use std::ffi::OsString;
use std::path::PathBuf;

use toml::{Table, Value};

const SUBCOMMANDS: [&str; 7] = [
    "ingest",
    "crop-plan",
    "search",
    "classify",
    "evaluate",
    "split",
    "prompt",
];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    None
}

/// Name of the subcommand in argv, skipping the value of a leading `--config`.
fn find_subcommand(argv: &[OsString]) -> Option<String> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if s == "--config" {
            i += 2;
            continue;
        }
        if SUBCOMMANDS.contains(&s.as_ref()) {
            return Some(s.into_owned());
        }
        if !s.starts_with('-') {
            return None;
        }
        i += 1;
    }
    None
}

fn flag_name(key: &str) -> String {
    let key = key.replace('_', "-");
    if key.chars().count() == 1 {
        format!("-{key}")
    } else {
        format!("--{key}")
    }
}

fn present(argv: &[OsString], flag: &str) -> bool {
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        if flag.starts_with("--") {
            s == flag || s.starts_with(&format!("{flag}="))
        } else {
            s.starts_with(flag)
        }
    })
}

fn scalar_text(key: &str, v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        other => Err(format!("config key `{key}`: unsupported value {other}")),
    }
}

fn push_key(out: &mut Vec<OsString>, key: &str, value: &Value) -> Result<(), String> {
    let flag = flag_name(key);
    match value {
        Value::Boolean(true) => out.push(flag.into()),
        Value::Boolean(false) => {}
        Value::Array(items) => {
            for item in items {
                out.push(flag.clone().into());
                out.push(scalar_text(key, item)?.into());
            }
        }
        v => {
            out.push(flag.into());
            out.push(scalar_text(key, v)?.into());
        }
    }
    Ok(())
}

/// Returns argv with the config file's keys appended after the subcommand's
/// own arguments. Without `--config` the input comes back unchanged.
pub(super) fn merge_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let msg = e.to_string();
        format!("{}: {}", path.display(), msg.lines().next().unwrap_or("invalid TOML"))
    })?;

    let command = match find_subcommand(&argv) {
        Some(name) => name,
        None => {
            let Some(Value::String(name)) = table.get("command") else {
                return Ok(argv);
            };
            if !SUBCOMMANDS.contains(&name.as_str()) {
                return Err(format!("{}: unknown command `{name}`", path.display()));
            }
            argv.push(name.clone().into());
            name.clone()
        }
    };

    // section keys override top-level ones
    let mut merged: Vec<(&String, &Value)> = table
        .iter()
        .filter(|(k, v)| k.as_str() != "command" && !v.is_table())
        .collect();
    if let Some(Value::Table(section)) = table.get(&command) {
        merged.retain(|(k, _)| !section.contains_key(k.as_str()));
        merged.extend(section.iter());
    }
    let mut extra = Vec::new();
    for (key, value) in merged {
        if !present(&argv, &flag_name(key)) {
            push_key(&mut extra, key, value)?;
        }
    }
    argv.extend(extra);
    Ok(argv)
}
