//! `--config FILE` support. Keys of the TOML file are long flag names
//! (underscores or hyphens). Top-level keys apply to every subcommand that
//! has the flag; a table named after a subcommand applies to that one only.
//! Values are spliced into argv after the subcommand token unless the same
//! flag was given on the command line.

use std::collections::BTreeSet;
use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::{Arg, Command};

fn long_of(token: &str) -> Option<&str> {
    let rest = token.strip_prefix("--")?;
    Some(rest.split_once('=').map_or(rest, |(name, _)| name))
}

fn find_long<'a>(cmd: &'a Command, long: &str) -> Option<&'a Arg> {
    cmd.get_arguments().find(|a| a.get_long() == Some(long))
}

fn takes_value(arg: &Arg) -> bool {
    arg.get_action().takes_values()
}

/// Position of the subcommand token in `argv`, skipping global flags and their values.
fn subcommand_position(root: &Command, argv: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let tok = &argv[i];
        if tok == "--" {
            return None;
        }
        if let Some(long) = long_of(tok) {
            let inline = tok.contains('=');
            let consumes = find_long(root, long)
                .is_some_and(|a| takes_value(a) && a.get_num_args().is_none_or(|n| n.min_values() > 0));
            i += if consumes && !inline { 2 } else { 1 };
            continue;
        }
        if tok.starts_with('-') {
            i += 1;
            continue;
        }
        return Some(i);
    }
    None
}

fn config_path(argv: &[String]) -> Option<String> {
    argv.iter().enumerate().find_map(|(i, tok)| {
        if let Some(v) = tok.strip_prefix("--config=") {
            Some(v.to_string())
        } else if tok == "--config" {
            argv.get(i + 1).cloned()
        } else {
            None
        }
    })
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(format!("config key \"{key}\": unsupported value {other}")),
    }
}

fn render(key: &str, long: &str, arg: &Arg, v: &toml::Value) -> Result<Vec<String>, String> {
    match v {
        toml::Value::Boolean(b) if !takes_value(arg) => Ok(if *b { vec![format!("--{long}")] } else { vec![] }),
        toml::Value::Array(items) => items
            .iter()
            .map(|item| scalar(key, item).map(|s| format!("--{long}={s}")))
            .collect(),
        _ if !takes_value(arg) => Err(format!("config key \"{key}\" is a switch and needs true or false")),
        other => Ok(vec![format!("--{long}={}", scalar(key, other)?)]),
    }
}

/// Returns `argv` with config values spliced in.
pub fn merge(root: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, clap::Error> {
    let argv: Vec<String> = argv.into_iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(path) = config_path(&argv) else {
        return Ok(argv.into_iter().map(OsString::from).collect());
    };
    let mut root = root.clone();
    root.build();
    let fail = |kind, msg: String| root.clone().error(kind, msg);

    let Some(pos) = subcommand_position(&root, &argv) else {
        return Ok(argv.into_iter().map(OsString::from).collect());
    };
    let Some(sub) = root.find_subcommand(&argv[pos]) else {
        return Ok(argv.into_iter().map(OsString::from).collect());
    };

    let text =
        std::fs::read_to_string(&path).map_err(|e| fail(ErrorKind::Io, format!("cannot read config {path}: {e}")))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| fail(ErrorKind::InvalidValue, format!("config {path}: {e}")))?;

    let given: BTreeSet<&str> = argv[1..].iter().filter_map(|t| long_of(t)).collect();
    let known_anywhere =
        |long: &str| find_long(&root, long).is_some() || root.get_subcommands().any(|s| find_long(s, long).is_some());

    let mut entries: Vec<(String, &toml::Value)> = Vec::new();
    let mut section: Option<&toml::Table> = None;
    for (key, value) in &table {
        match value {
            toml::Value::Table(t) => {
                if root.find_subcommand(key).is_none() {
                    return Err(fail(
                        ErrorKind::UnknownArgument,
                        format!("config section [{key}] is not a subcommand"),
                    ));
                }
                if key == sub.get_name() {
                    section = Some(t);
                }
            }
            _ => entries.push((key.clone(), value)),
        }
    }
    // Section keys win over top-level keys of the same name.
    if let Some(t) = section {
        for (key, value) in t {
            let long = key.replace('_', "-");
            entries.retain(|(k, _)| k.replace('_', "-") != long);
            entries.push((key.clone(), value));
        }
    }

    let mut extra = Vec::new();
    for (key, value) in entries {
        let long = key.replace('_', "-");
        if long == "config" {
            continue;
        }
        if !known_anywhere(&long) {
            return Err(fail(
                ErrorKind::UnknownArgument,
                format!("unknown config key \"{key}\""),
            ));
        }
        let Some(arg) = find_long(sub, &long) else {
            let scoped = section.is_some_and(|t| t.contains_key(&key));
            if scoped {
                return Err(fail(
                    ErrorKind::UnknownArgument,
                    format!("config key \"{key}\" is not a flag of {}", sub.get_name()),
                ));
            }
            continue;
        };
        if given.contains(long.as_str()) {
            continue;
        }
        extra.extend(render(&key, &long, arg, value).map_err(|m| fail(ErrorKind::InvalidValue, m))?);
    }

    let mut out = argv;
    out.splice(pos + 1..pos + 1, extra);
    Ok(out.into_iter().map(OsString::from).collect())
}
