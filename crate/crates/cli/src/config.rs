//! Plain `key = value` configuration files. Blank lines and `#` comments are
//! ignored; keys are unique.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{usage_err, CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage_err(format!("config line {}: expected key = value", lineno + 1));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return usage_err(format!("config line {}: empty key", lineno + 1));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return usage_err(format!("config key `{key}` given twice"));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).ok_or_else(|| CliError::Usage(format!("config key `{key}`: bad list `{v}`"))),
        }
    }

    /// Fails on keys outside `known`, catching typos.
    pub fn check_known(&self, known: &[&str]) -> CliResult<()> {
        for key in self.entries.keys() {
            if !known.contains(&key.as_str()) {
                return usage_err(format!("unknown config key `{key}`"));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}
