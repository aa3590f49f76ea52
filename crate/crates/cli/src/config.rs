//! Flat key-value run configuration: one `dotted.key = value` per line,
//! `#` comments, order-insensitive. Chosen for diffability in experiment
//! logs. Unknown keys are rejected with the offending path once a command
//! has consumed everything it understands.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.to_string(), message: message.into() }
}

/// Parsed configuration with consumption tracking.
#[derive(Debug, Clone)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err("", format!("line {}: expected `key = value`", lineno + 1)));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(err("", format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(err(&key, "duplicate key"));
            }
        }
        Ok(Self { entries, consumed: BTreeSet::new() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical serialization (sorted keys); parse(serialize(c)) == c.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Override or insert a key (used by the sweep driver).
    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    pub fn string(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or_else(|| default.to_string())
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| err(key, format!("not a number: `{v}`"))),
        }
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| err(key, format!("not an integer: `{v}`"))),
        }
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(err(key, format!("not a boolean: `{v}`"))),
            },
        }
    }

    pub fn f64_list(&mut self, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| err(key, format!("not a number: `{s}`"))))
                .collect(),
        }
    }

    pub fn string_list(&mut self, key: &str) -> Vec<String> {
        match self.raw(key) {
            None => Vec::new(),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// After a command has consumed what it understands, every remaining key
    /// is a config error with its path.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        for key in self.entries.keys() {
            if !self.consumed.contains(key) {
                return Err(err(key, "unknown key"));
            }
        }
        Ok(())
    }

    /// Mark sweep bookkeeping keys as consumed (point configs carry them).
    pub fn consume_prefix(&mut self, prefix: &str) {
        let keys: Vec<String> =
            self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        for k in keys {
            self.consumed.insert(k);
        }
    }
}
