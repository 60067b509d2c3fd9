//! Plain-text configuration files.
//!
//! Grammar, line by line:
//!   - blank lines and lines starting with `#` or `;` are ignored
//!   - `[name]` opens a section; keys before any section live in ""
//!   - `key = value` assigns within the current section (last wins)
//!   - list values are comma-separated, entries trimmed
//!
//! Anything else is a config error naming the line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", idx + 1))
                })?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    idx + 1
                )));
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { sections })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn parse_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("[{section}] {key}: cannot parse '{raw}'"))
            }),
        }
    }

    /// Comma-separated list, parsed element-wise; `default` when absent.
    pub fn list_or<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::Config(format!("[{section}] {key}: cannot parse element '{s}'"))
                    })
                })
                .collect(),
        }
    }
}
