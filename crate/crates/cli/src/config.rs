//! `--config` files: one `key=value` per line, `#` comments. Keys are long flag
//! names (`_` and `-` are interchangeable). Every key not already given on the
//! command line is appended to argv as `--key=value` before parsing.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory};

use crate::{Cli, CliError, CliResult};

const GLOBAL_VALUED: [&str; 3] = ["--seed", "--workers", "--config"];

pub(crate) fn parse_config(text: &str, path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                n + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::usage(format!(
                "{}:{}: empty key",
                path.display(),
                n + 1
            )));
        }
        if !seen.insert(key.clone()) {
            return Err(CliError::usage(format!(
                "{}:{}: key {key:?} repeated",
                path.display(),
                n + 1
            )));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Index of the subcommand token, skipping values of global options.
fn subcommand_position(argv: &[OsString], names: &HashSet<String>) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if names.contains(s.as_ref()) {
            return Some(i);
        }
        i += 1;
    }
    None
}

pub(crate) fn merge_config_file(
    argv: Vec<OsString>,
    data_root: Option<&Path>,
) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = match data_root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            annoforge::Error::MissingArtifact(path.clone())
        } else {
            annoforge::Error::Io {
                path: path.clone(),
                source: e,
            }
        }
    })?;
    let entries = parse_config(&text, &path)?;

    let root = Cli::command();
    let names: HashSet<String> = root
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let Some(pos) = subcommand_position(&argv, &names) else {
        // No subcommand: let clap report the usage error.
        return Ok(argv);
    };
    let sub = root
        .find_subcommand(argv[pos].to_string_lossy().as_ref())
        .expect("position found by name");
    let explicit: HashSet<String> = argv
        .iter()
        .skip(1)
        .filter_map(|a| {
            let s = a.to_string_lossy();
            let body = s.strip_prefix("--")?;
            Some(body.split('=').next().unwrap_or(body).to_string())
        })
        .collect();

    let mut extra = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(CliError::usage(format!(
                "{}: a config file cannot name another config",
                path.display()
            )));
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| {
                CliError::usage(format!(
                    "{}: unknown key {key:?} for {}",
                    path.display(),
                    sub.get_name()
                ))
            })?;
        if explicit.contains(&key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => extra.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => {
                    return Err(CliError::usage(format!(
                        "{}: flag {key:?} takes true or false, got {other:?}",
                        path.display()
                    )))
                }
            },
            _ => extra.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    let mut argv = argv;
    argv.extend(extra);
    Ok(argv)
}
