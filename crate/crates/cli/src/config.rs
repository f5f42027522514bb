//! `--config` files: a flat JSON object whose keys are flag names.
//!
//! Values are turned into extra command-line arguments. A key whose flag is
//! already present on the command line is skipped, so explicit flags win.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::CommandFactory;
use serde_json::Value;

use crate::args::Cli;
use crate::CliError;

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn is_explicit(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    argv.iter().skip(1).any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

/// Long flag name -> whether it takes a value, for `subcommand` plus globals.
fn known_flags(subcommand: &str) -> HashMap<String, bool> {
    let cmd = Cli::command();
    let mut flags = HashMap::new();
    let sub = cmd.find_subcommand(subcommand).into_iter().flat_map(|s| s.get_arguments());
    for arg in cmd.get_arguments().chain(sub) {
        if let Some(long) = arg.get_long() {
            flags.insert(long.to_owned(), arg.get_action().takes_values());
        }
    }
    flags
}

fn subcommand_of(argv: &[OsString]) -> Option<String> {
    let cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_owned()).collect();
    argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).find(|a| names.contains(a))
}

/// Returns `argv` with the config file's values appended.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Validation(format!("config {}: expected a JSON object", path.display())));
    };
    let Some(sub) = subcommand_of(&argv) else { return Ok(argv) };
    let flags = known_flags(&sub);

    let mut out = argv.clone();
    for (key, value) in map {
        let long = key.replace('_', "-");
        let Some(&takes_value) = flags.get(&long) else {
            return Err(CliError::Validation(format!("config {}: unknown key `{key}` for `{sub}`", path.display())));
        };
        if long == "config" || is_explicit(&argv, &long) {
            continue;
        }
        let text = match &value {
            Value::Null => continue,
            Value::Bool(b) if !takes_value => {
                if *b {
                    out.push(format!("--{long}").into());
                }
                continue;
            }
            Value::Bool(b) => b.to_string(),
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.clone(),
            _ => {
                return Err(CliError::Validation(format!(
                    "config {}: value of `{key}` must be a string, number or boolean",
                    path.display()
                )))
            }
        };
        if !takes_value {
            return Err(CliError::Validation(format!("config {}: `{key}` is a switch; use true or false", path.display())));
        }
        out.push(format!("--{long}").into());
        out.push(text.into());
    }
    Ok(out)
}
