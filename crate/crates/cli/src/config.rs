//! `--config FILE` support: each `key = value` line becomes `--key value`,
//! inserted right after the subcommand so that later command-line flags
//! override it.

use std::ffi::OsString;
use std::fs;

use crate::common::Failure;

pub fn parse_config(text: &str, origin: &str) -> Result<Vec<OsString>, Failure> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("{origin}:{}: expected key=value, found `{line}`", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Failure::input(format!("{origin}:{}: invalid key `{key}`", i + 1)));
        }
        args.push(OsString::from(format!("--{key}")));
        args.push(OsString::from(value.trim()));
    }
    Ok(args)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(OsString::from(v));
        }
    }
    None
}

/// The argument vector with the config file entries spliced in after the subcommand.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let origin = path.to_string_lossy().into_owned();
    let text = fs::read_to_string(&path).map_err(|e| Failure::input(format!("cannot read config {origin}: {e}")))?;
    let extra = parse_config(&text, &origin)?;
    let at = 2.min(args.len());
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
