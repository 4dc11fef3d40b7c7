//! Config-file handling and value resolution.
//!
//! Precedence is defaults < config file < command-line flags. Config files
//! are flat `key=value` text using the flag names (without leading dashes);
//! `#` starts a comment. Every resolved value is echoed into the header of
//! each output file, so a file's `#config` line is a complete recipe for
//! reproducing it.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig(HashMap<String, String>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError {
            code: 3,
            message: format!("cannot read config {}: {e}", path.display()),
        })?;
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn parsed_bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.parsed(key)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key {key}: bad value {raw:?}"))),
        }
    }
}

/// One resolved run configuration: ordered key/value pairs for the header
/// echo plus typed access on the way in.
#[derive(Debug, Default)]
pub struct Resolved {
    pairs: Vec<(String, String)>,
}

impl Resolved {
    pub fn put(&mut self, key: &str, value: impl Display) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    /// The `config ...` header payload (without the leading `#`).
    pub fn echo(&self) -> String {
        let body = self
            .pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        format!("config {body}")
    }
}

/// Flag, then config file, then default.
pub fn resolve<T: FromStr + Display>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
    out: &mut Resolved,
) -> Result<T, CliError> {
    let value = match flag {
        Some(v) => v,
        None => file.parsed(key)?.unwrap_or(default),
    };
    out.put(key, &value);
    Ok(value)
}

/// Flag or config file; missing everywhere is a usage error.
pub fn resolve_required<T: FromStr + Display>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    out: &mut Resolved,
) -> Result<T, CliError> {
    let value = match flag {
        Some(v) => v,
        None => file
            .parsed(key)?
            .ok_or_else(|| CliError::usage(format!("missing required value --{key}")))?,
    };
    out.put(key, &value);
    Ok(value)
}

/// Comma-separated list of layer widths.
pub fn parse_hidden(s: &str) -> Result<Vec<usize>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad layer width {t:?}")))
        .collect()
}
