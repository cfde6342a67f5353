//! `key = value` configuration files supplying flag defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use super::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>, CliError> {
    let mut seen = BTreeMap::new();
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(CliError::Usage(format!("config line {line}: expected `key = value`, got {body:?}")));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(CliError::Usage(format!("config line {line}: empty key or value")));
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(CliError::Usage(format!("config line {line}: key {key:?} already set on line {first}")));
        }
        entries.push(ConfigEntry { line, key, value });
    }
    Ok(entries)
}

pub fn load_config(path: &Path) -> Result<Vec<ConfigEntry>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Turns entries into `--key=value` arguments for `command`, rejecting keys
/// that are not flags of that subcommand.
pub fn config_args(entries: &[ConfigEntry], command: &clap::Command) -> Result<Vec<OsString>, CliError> {
    let mut args = Vec::new();
    for entry in entries {
        let arg = command
            .get_arguments()
            .find(|a| a.get_long() == Some(entry.key.as_str()) && !super::is_global_flag(a.get_id().as_str()))
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: unknown key {:?} for `{}`",
                    entry.line,
                    entry.key,
                    command.get_name()
                ))
            })?;
        if arg.get_action().takes_values() {
            args.push(OsString::from(format!("--{}={}", entry.key, entry.value)));
        } else {
            match entry.value.as_str() {
                "true" => args.push(OsString::from(format!("--{}", entry.key))),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config line {}: {:?} takes true or false, got {other:?}",
                        entry.line, entry.key
                    )))
                }
            }
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let entries = parse_config("# header\n\nb = 2   # branching\nm_max=6\n").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0], ConfigEntry { line: 3, key: "b".into(), value: "2".into() });
        assert_eq!(entries[1].key, "m-max");
        assert!(parse_config("").unwrap().is_empty());
    }

    #[test]
    fn malformed_lines_name_their_number() {
        let err = parse_config("b = 2\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_config("b = 2\nb = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_config("b =\n").is_err());
    }
}
