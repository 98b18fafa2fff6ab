//! `--config` overlay: a TOML file with one table per subcommand, e.g.
//!
//! ```toml
//! [annotate]
//! fuzzy-threshold = 0.7
//!
//! [review.serve]
//! port = 9000
//! ```
//!
//! Table entries are spliced into argv directly after the subcommand, so any
//! flag given on the command line comes later and wins.

use std::ffi::OsString;
use std::fs;

pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config file {path}: {e}"))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| format!("config file {path}: {e}"))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| !v.is_table()) {
        return Err(format!("config file {path}: key {k:?} must live in a [subcommand] table"));
    }

    let (command_path, insert_at) = subcommand_path(&argv);
    let mut section = Some(&table);
    for name in &command_path {
        section = section.and_then(|t| t.get(name.as_str())).and_then(toml::Value::as_table);
    }
    let Some(section) = section else { return Ok(argv) };

    let mut extra = Vec::new();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => extra.push(flag),
            toml::Value::Boolean(false) | toml::Value::Table(_) => {}
            toml::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_, _>>()?;
                extra.push(flag);
                extra.push(joined.join(","));
            }
            other => {
                extra.push(flag);
                extra.push(scalar(other)?);
            }
        }
    }
    let mut out = argv;
    out.splice(insert_at..insert_at, extra.into_iter().map(OsString::from));
    Ok(out)
}

fn scalar(v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(format!("unsupported config value {other}")),
    }
}

fn config_path(argv: &[OsString]) -> Option<String> {
    let mut it = argv.iter().skip(1).map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(|s| s.into_owned());
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Subcommand names (one level, or two for `review serve`) and the argv index
/// just past them.
fn subcommand_path(argv: &[OsString]) -> (Vec<String>, usize) {
    let mut path = Vec::new();
    let mut i = 1;
    let mut end = argv.len();
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        path.push(a.into_owned());
        end = i + 1;
        if path.len() == 2 || path[0] != "review" {
            break;
        }
        i += 1;
    }
    (path, end.min(argv.len()))
}
