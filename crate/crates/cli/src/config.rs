//! `--config FILE` support.
//!
//! The file is TOML. A table named after the subcommand supplies its flags;
//! without one, top-level scalar keys are used. Keys are long flag names
//! (`max_iter` and `max-iter` both work). Values are spliced into the
//! argument list right after the subcommand, so explicit flags given later
//! on the command line override them.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};
use toml::Value;

const SUBCOMMANDS: [&str; 8] = [
    "dataset",
    "fit",
    "sample",
    "conditional",
    "surrogate",
    "trajectory",
    "evaluate",
    "experiment",
];

pub fn expand_args(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = take_config(&mut args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {path}"))?;

    let Some(pos) = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
    else {
        return Ok(args);
    };
    let sub = args[pos].to_str().unwrap_or_default().to_owned();
    let source = match table.get(&sub) {
        Some(Value::Table(t)) => t.clone(),
        _ => table.into_iter().filter(|(_, v)| !v.is_table()).collect(),
    };
    let injected = flags_from_table(&source)?;
    args.splice(pos + 1..pos + 1, injected);
    Ok(args)
}

fn take_config(args: &mut Vec<OsString>) -> Result<Option<String>> {
    let mut i = 1;
    while i < args.len() {
        let Some(s) = args[i].to_str() else {
            i += 1;
            continue;
        };
        if s == "--" {
            break;
        }
        if s == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a file name");
            }
            let path = args[i + 1].to_string_lossy().into_owned();
            args.drain(i..i + 2);
            return Ok(Some(path));
        }
        if let Some(path) = s.strip_prefix("--config=") {
            let path = path.to_owned();
            args.remove(i);
            return Ok(Some(path));
        }
        i += 1;
    }
    Ok(None)
}

fn flags_from_table(table: &toml::Table) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Boolean(true) => out.push(flag.into()),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push(format!("{flag}={}", parts.join(",")).into());
            }
            other => out.push(format!("{flag}={}", scalar(other)?).into()),
        }
    }
    Ok(out)
}

fn scalar(v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(b) => b.to_string(),
        other => bail!("unsupported config value {other}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn no_config_leaves_args_alone() {
        let a = os(&["sbridge", "fit", "--epsilon", "0.1"]);
        assert_eq!(expand_args(a.clone()).unwrap(), a);
    }

    #[test]
    fn section_values_precede_explicit_flags() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "epsilon = 0.5\n[fit]\nepsilon = 0.2\nmax_iter = 7\nheader = true\n").unwrap();
        let path = f.path().to_str().unwrap();
        let a = os(&["sbridge", "--config", path, "fit", "--epsilon", "0.1"]);
        let got = expand_args(a).unwrap();
        let got: Vec<_> = got.iter().map(|s| s.to_str().unwrap()).collect();
        assert_eq!(
            got,
            ["sbridge", "fit", "--epsilon=0.2", "--header", "--max-iter=7", "--epsilon", "0.1"]
        );
    }

    #[test]
    fn top_level_keys_and_arrays() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "init = [0.5, -1.0]\nscheme = \"unaware-split\"\n").unwrap();
        let arg = format!("--config={}", f.path().display());
        let got = expand_args(os(&["sbridge", "sample", &arg])).unwrap();
        let got: Vec<_> = got.iter().map(|s| s.to_str().unwrap()).collect();
        assert_eq!(got, ["sbridge", "sample", "--init=0.5,-1", "--scheme=unaware-split"]);
    }

    #[test]
    fn missing_config_file_is_an_error() {
        assert!(expand_args(os(&["sbridge", "--config", "/nonexistent/x.toml", "fit"])).is_err());
    }
}
