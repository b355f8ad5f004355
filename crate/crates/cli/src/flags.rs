//! Command-line parsing with defaults from a `--config` file.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory, FromArgMatches};

use crate::Cli;

/// Parses `argv`, filling flags the user did not give from the config file.
pub fn parse(mut argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let mut cmd = Cli::command();
    let matches = cmd.try_get_matches_from_mut(argv.clone())?;
    if let Some(path) = matches.get_one::<std::path::PathBuf>("config") {
        let text =
            std::fs::read_to_string(path).map_err(|e| cmd.error(ErrorKind::Io, format!("{}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| cmd.error(ErrorKind::InvalidValue, format!("{}: {e}", path.display())))?;
        argv.extend(config_flags(&mut cmd, &matches, &table)?);
    }
    let matches = cmd.try_get_matches_from_mut(argv)?;
    Cli::from_arg_matches(&matches).map_err(|e| e.format(&mut cmd))
}

fn config_flags(
    cmd: &mut clap::Command,
    matches: &ArgMatches,
    table: &toml::Table,
) -> Result<Vec<OsString>, clap::Error> {
    let mut path = Vec::new();
    let mut leaf = matches;
    while let Some((name, sub)) = leaf.subcommand() {
        path.push(name.to_string());
        leaf = sub;
    }
    // Top-level keys apply where the command has such a flag; keys in the
    // command's own table must all be flags.
    let mut entries: Vec<(&String, &toml::Value, bool)> = table
        .iter()
        .filter(|(_, v)| !v.is_table())
        .map(|(k, v)| (k, v, false))
        .collect();
    let mut section = Some(table);
    for name in &path {
        section = section.and_then(|t| t.get(name)).and_then(|v| v.as_table());
    }
    if let Some(s) = section {
        entries.extend(s.iter().filter(|(_, v)| !v.is_table()).map(|(k, v)| (k, v, true)));
    }

    let mut leaf_cmd = cmd.clone();
    leaf_cmd.build();
    for name in &path {
        leaf_cmd = leaf_cmd
            .find_subcommand(name)
            .cloned()
            .expect("matched subcommand exists");
    }
    let mut out = Vec::new();
    for (key, value, strict) in entries {
        let id = key.replace('-', "_");
        if id == "config" {
            continue;
        }
        let Some(arg) = leaf_cmd.get_arguments().find(|a| a.get_id() == id.as_str()) else {
            if !strict {
                continue;
            }
            return Err(cmd.error(
                ErrorKind::UnknownArgument,
                format!("config key `{key}` is not a flag of this command"),
            ));
        };
        let Some(long) = arg.get_long() else { continue };
        if leaf.try_contains_id(&id).is_ok() && leaf.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{long}");
        match (value, arg.get_action()) {
            (toml::Value::Boolean(b), ArgAction::SetTrue) => {
                if *b {
                    out.push(flag.into());
                }
            }
            (toml::Value::Array(items), _) => {
                for v in items {
                    out.push(format!("{flag}={}", scalar(v)).into());
                }
            }
            (v, _) => out.push(format!("{flag}={}", scalar(v)).into()),
        }
    }
    Ok(out)
}

fn scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
