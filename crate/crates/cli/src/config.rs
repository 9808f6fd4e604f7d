//! `--config FILE` support.
//!
//! The file holds one table per subcommand (`[pack]`, `[evalgen.kv]`, ...)
//! whose keys are long flag names. Values are appended to the command line
//! for every flag the user did not pass, so explicit flags always win.

use std::path::Path;

use anyhow::{bail, Context, Result};

const SUBCOMMANDS: &[&str] = &[
    "ingest", "census", "pack", "mix", "plan", "rope", "lossagg", "synthgen", "evalgen", "verify",
];

/// Returns the config path given on the command line, if any.
fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_owned());
        }
    }
    None
}

fn scalar(v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(","),
        other => bail!("unsupported config value {other}"),
    })
}

pub fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let raw = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let table: toml::Table = toml::from_str(&raw).with_context(|| format!("parsing config {path}"))?;

    let mut positionals = args.iter().skip(1).filter(|a| !a.starts_with('-'));
    let Some(sub) = positionals.find(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut section = match table.get(sub.as_str()) {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => bail!("config section [{sub}] must be a table"),
        None => return Ok(args),
    };
    if sub == "evalgen" {
        let nested = positionals.next().and_then(|n| section.get(n.as_str()).cloned());
        section = match nested {
            Some(toml::Value::Table(t)) => t,
            _ => toml::Table::new(),
        };
    }

    let mut out = args.clone();
    for (key, value) in &section {
        if value.is_table() {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let given = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            v => {
                out.push(flag);
                out.push(scalar(v)?);
            }
        }
    }
    Ok(out)
}
