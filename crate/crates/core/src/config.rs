//! Flat `key = value` configuration files (TOML syntax, no tables) with
//! command-line overrides. Precedence: overrides > file > defaults.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

/// A single configuration value as read from a file or a `--set key=value` override.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigValue(toml::Value);

impl ConfigValue {
    /// Parses an override string; bare words that are not valid TOML become strings.
    pub fn parse(raw: &str) -> Self {
        let wrapped = format!("v = {raw}");
        match wrapped.parse::<toml::Table>() {
            Ok(mut t) => ConfigValue(t.remove("v").expect("key present")),
            Err(_) => ConfigValue(toml::Value::String(raw.to_string())),
        }
    }

    pub fn as_f64(&self, key: &str) -> Result<f64> {
        match &self.0 {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            other => Err(Error::Config(format!("`{key}` expects a number, got {other}"))),
        }
    }

    pub fn as_usize(&self, key: &str) -> Result<usize> {
        match &self.0 {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            other => Err(Error::Config(format!(
                "`{key}` expects a non-negative integer, got {other}"
            ))),
        }
    }

    pub fn as_u64(&self, key: &str) -> Result<u64> {
        self.as_usize(key).map(|v| v as u64)
    }

    pub fn as_bool(&self, key: &str) -> Result<bool> {
        match &self.0 {
            toml::Value::Boolean(b) => Ok(*b),
            other => Err(Error::Config(format!("`{key}` expects true/false, got {other}"))),
        }
    }

    pub fn as_str(&self, key: &str) -> Result<String> {
        match &self.0 {
            toml::Value::String(s) => Ok(s.clone()),
            other => Err(Error::Config(format!("`{key}` expects a string, got {other}"))),
        }
    }

    pub fn as_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        match &self.0 {
            toml::Value::Array(items) => items
                .iter()
                .map(|v| ConfigValue(v.clone()).as_usize(key))
                .collect(),
            toml::Value::Integer(_) => Ok(vec![self.as_usize(key)?]),
            toml::Value::String(s) => s
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("`{key}`: bad list entry `{p}`")))
                })
                .collect(),
            other => Err(Error::Config(format!("`{key}` expects a list, got {other}"))),
        }
    }
}

/// Raw key/value pairs in file order-independent form.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, ConfigValue>,
}

impl RawConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let mut entries = BTreeMap::new();
        for (k, v) in table {
            if v.is_table() {
                return Err(Error::Config(format!(
                    "config must be flat; `{k}` is a table"
                )));
            }
            entries.insert(k, ConfigValue(v));
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&text)
    }

    /// Applies `key=value` overrides on top of the current entries.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.entries
                .insert(k.trim().to_string(), ConfigValue::parse(v.trim()));
        }
        Ok(self)
    }

    pub fn insert(&mut self, key: &str, value: ConfigValue) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConfigValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Splits off the entries whose keys `C` accepts.
    pub fn take_known<C: FlatConfig>(&mut self) -> RawConfig {
        let (known, rest): (BTreeMap<_, _>, BTreeMap<_, _>) = std::mem::take(&mut self.entries)
            .into_iter()
            .partition(|(k, _)| C::KEYS.contains(&k.as_str()));
        self.entries = rest;
        RawConfig { entries: known }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// A configuration struct addressable by flat keys.
pub trait FlatConfig: Default {
    const KEYS: &'static [&'static str];

    fn set_key(&mut self, key: &str, value: &ConfigValue) -> Result<()>;

    /// Key/value pairs for serialisation, in `KEYS` order.
    fn to_pairs(&self) -> Vec<(&'static str, String)>;

    /// Builds from defaults plus `raw`; any unknown key is an error listing the valid ones.
    fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in raw.iter() {
            if !Self::KEYS.contains(&k) {
                return Err(Error::UnknownKey {
                    key: k.to_string(),
                    valid: Self::KEYS.iter().map(|s| s.to_string()).collect(),
                });
            }
            cfg.set_key(k, v)?;
        }
        Ok(cfg)
    }

    /// Renders as a flat TOML document that `from_raw` reads back.
    fn to_toml(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
