//! Flat `key = value` run files.
//!
//! Keys are flag names without the leading dashes (`batch_size` and
//! `batch-size` are the same key). Lines starting with `#` and blank lines are
//! ignored. Entries become flags placed before the command-line flags, so an
//! explicit flag always wins.

use std::ffi::OsString;
use std::fs;

use clap::ArgAction;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected `key = value`", i + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value)
            .to_string();
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(CliError::Usage(format!(
                "config line {}: duplicate key `{key}`",
                i + 1
            )));
        }
        entries.push(Entry {
            line: i + 1,
            key,
            value,
        });
    }
    Ok(entries)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Inserts the entries of the `--config` file, if any, right after the
/// subcommand name.
pub fn expand(cmd: &clap::Command, argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(name) = argv.get(1).map(|a| a.to_string_lossy().into_owned()) else {
        return Ok(argv);
    };
    let Some(sub) = cmd.find_subcommand(&name) else {
        return Ok(argv);
    };
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Usage(format!(
            "cannot read config file {}: {e}",
            path.to_string_lossy()
        ))
    })?;
    let mut injected: Vec<OsString> = Vec::new();
    for entry in parse(&text)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(entry.key.as_str()) && entry.key != "config")
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: unknown key `{}` for `{name}`",
                    entry.line, entry.key
                ))
            })?;
        let flag = format!("--{}", entry.key);
        match arg.get_action() {
            ArgAction::SetTrue | ArgAction::SetFalse => match entry.value.as_str() {
                "true" => injected.push(flag.into()),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config line {}: `{}` expects true or false, got `{other}`",
                        entry.line, entry.key
                    )))
                }
            },
            _ => {
                injected.push(flag.into());
                injected.push(entry.value.into());
            }
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}
