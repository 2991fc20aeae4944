//! Flat key=value run settings: an optional config file plus command-line
//! overrides, consumed key by key so unknown names are caught and the
//! effective values (defaults included) can be echoed into the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    remaining: BTreeMap<String, String>,
    effective: BTreeMap<String, String>,
}

fn parse_pair(raw: &str, origin: &str) -> Result<(String, String), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("{origin}: expected key=value, got {raw:?}")))?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!("{origin}: empty key in {raw:?}")));
    }
    Ok((key.to_string(), value.to_string()))
}

impl Settings {
    /// Build from an optional config file and ordered override pairs;
    /// later sources win.
    pub fn from_sources(config: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut remaining = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = parse_pair(line, &format!("{}:{}", path.display(), lineno + 1))?;
                remaining.insert(k, v);
            }
        }
        for raw in overrides {
            let (k, v) = parse_pair(raw, "override")?;
            remaining.insert(k, v);
        }
        Ok(Self { remaining, effective: BTreeMap::new() })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.remaining.insert(key.to_string(), value);
    }

    fn record<T: std::fmt::Display>(&mut self, key: &str, value: &T) {
        self.effective.insert(key.to_string(), value.to_string());
    }

    pub fn string(&mut self, key: &str, default: &str) -> String {
        let v = self.remaining.remove(key).unwrap_or_else(|| default.to_string());
        self.record(key, &v);
        v
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = match self.remaining.remove(key) {
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{key} = {raw:?} is not a number")))?,
            None => default,
        };
        if !v.is_finite() {
            return Err(CliError::Usage(format!("{key} = {v} must be finite")));
        }
        self.record(key, &v);
        Ok(v)
    }

    /// Like `f64`, but with no default: absent keys stay absent.
    pub fn f64_opt(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.remaining.remove(key) {
            Some(raw) => {
                let v = raw
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("{key} = {raw:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(CliError::Usage(format!("{key} = {v} must be finite")));
                }
                self.record(key, &v);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        let v = match self.remaining.remove(key) {
            Some(raw) => raw
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("{key} = {raw:?} is not an integer")))?,
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        let v = match self.remaining.remove(key) {
            Some(raw) => raw
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{key} = {raw:?} is not an integer")))?,
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        let v = match self.remaining.remove(key) {
            Some(raw) => match raw.as_str() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                _ => return Err(CliError::Usage(format!("{key} = {raw:?} is not a boolean"))),
            },
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Comma-separated list of numbers.
    pub fn f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let v = match self.remaining.remove(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        CliError::Usage(format!("{key}: {s:?} is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>, CliError>>()?,
            None => default.to_vec(),
        };
        if v.is_empty() {
            return Err(CliError::Usage(format!("{key} must not be empty")));
        }
        let rendered = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        self.effective.insert(key.to_string(), rendered);
        Ok(v)
    }

    /// Accept a key that this scenario has no use for (still echoed when set).
    pub fn ignore(&mut self, key: &str) {
        if let Some(v) = self.remaining.remove(key) {
            self.effective.insert(key.to_string(), v);
        }
    }

    /// Reject unread keys and hand back the effective configuration.
    pub fn finish(self) -> Result<BTreeMap<String, String>, CliError> {
        if let Some(key) = self.remaining.keys().next() {
            return Err(CliError::Usage(format!("unknown setting {key:?}")));
        }
        Ok(self.effective)
    }
}
