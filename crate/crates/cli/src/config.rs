//! Config files, manifests and sidecar paths.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::CliError;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped, and a
/// key may repeat for list-valued flags.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Input(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
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

fn given_flags(args: &[OsString]) -> Vec<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap().to_string())
        .collect()
}

/// Appends config entries as flags unless the command line already sets them.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let given = given_flags(&args);
    let mut out = args;
    for (key, value) in parse_config(&text)? {
        if key == "config" || given.contains(&key) {
            continue;
        }
        match value.as_str() {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

/// Every resolved argument of the command, defaults included, in a form that
/// can be fed back through `--config`.
pub fn manifest(root: &clap::Command, command: &str, sub: &ArgMatches) -> String {
    let mut s = String::new();
    writeln!(s, "# eqflow {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "# command {command}").unwrap();
    let sub_cmd = root.find_subcommand(command).expect("known subcommand");
    let args = root.get_arguments().chain(sub_cmd.get_arguments());
    for (id, long) in args.filter_map(|a| Some((a.get_id().as_str(), a.get_long()?))) {
        if id == "config" || id == "help" || id == "version" {
            continue;
        }
        // unset flags stay out
        if sub.value_source(id) == Some(ValueSource::DefaultValue) && sub.try_get_one::<bool>(id).is_ok_and(|v| v == Some(&false)) {
            continue;
        }
        let Some(raw) = sub.get_raw(id) else { continue };
        for v in raw {
            writeln!(s, "{long} = {}", v.to_string_lossy()).unwrap();
        }
    }
    s
}

/// `out` with `suffix` appended to its file name.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Inserts `tag` before the extension: `flow.eqfv` becomes `flow.seed3.eqfv`.
pub fn tagged(out: &Path, tag: &str) -> PathBuf {
    match (out.file_stem(), out.extension()) {
        (Some(stem), Some(ext)) => {
            out.with_file_name(format!("{}.{tag}.{}", stem.to_string_lossy(), ext.to_string_lossy()))
        }
        _ => sidecar(out, &format!(".{tag}")),
    }
}

/// Comma-joined CSV with a header row. Values never contain commas here.
pub fn csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.into_iter().collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}
