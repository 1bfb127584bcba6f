//! Run files: one `key = value` per line, `#` starts a comment, keys are the
//! long flag names of the subcommand (`b0`, `mw-ghz`, `mw_ghz`, ...). The
//! entries are spliced in front of the command-line flags, so flags win.

use std::path::Path;

use crate::error::CliError;

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected `key = value`, got `{line}`", origin.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() || key == "config" {
            return Err(CliError::Config(format!("{}:{}: invalid key `{key}`", origin.display(), n + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Expand `--config PATH` (anywhere after the subcommand) into flags placed
/// directly after the subcommand name.
pub fn expand_args(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    let entries = parse_config(&text, Path::new(&path))?;
    let Some(sub) = argv.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Ok(argv);
    };
    let mut out: Vec<String> = argv[..=sub].to_vec();
    out.extend(entries.into_iter().map(|(k, v)| format!("--{k}={v}")));
    out.extend(argv[sub + 1..].iter().cloned());
    Ok(out)
}
