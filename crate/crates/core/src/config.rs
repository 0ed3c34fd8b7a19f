//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.
//! [`Config::hash`] digests the canonical sorted form, so formatting and key
//! order do not change it.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
    source: String,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err =
                |column: usize, msg: String| Error::Parse { path: source.into(), line: i as u64 + 1, column, msg };
            let Some(eq) = line.find('=') else {
                return Err(err(1, format!("expected `key = value`, got `{line}`")));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(err(1, "empty key".into()));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(err(1, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries, source: source.into() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => self.parse_value(key, v),
        }
    }

    /// Comma-separated list, or `default` when absent.
    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.split(',').map(|item| self.parse_value(key, item.trim())).collect(),
        }
    }

    fn parse_value<T: FromStr>(&self, key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| {
            Error::InvalidArgument(format!(
                "{}: cannot parse `{v}` for key `{key}` as {}",
                self.source,
                std::any::type_name::<T>()
            ))
        })
    }

    /// Rejects keys outside `allowed`, which usually signal a typo.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!("{}: unknown key `{k}`", self.source)));
            }
        }
        Ok(())
    }

    /// Sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Config::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&digest[..8])
    }
}
