//! Flat `key=value` text used for run configs and checkpoint headers.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored.
//! Keys are unique. Values are trimmed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected key=value, got `{line}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", lineno + 1)));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Parses `key` if present, otherwise returns `default`.
    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self
            .get(key)
            .ok_or_else(|| Error::config(format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|e| Error::config(format!("key `{key}`: cannot parse `{v}`: {e}")))
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let kv = KvMap::parse("# run\nlevels = 4\n\nresampler=dwt_haar\n").unwrap();
        assert_eq!(kv.get("levels"), Some("4"));
        assert_eq!(kv.require::<usize>("levels").unwrap(), 4);
        assert_eq!(KvMap::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn errors() {
        assert!(KvMap::parse("a=1\na=2").is_err());
        assert!(KvMap::parse("novalue").is_err());
        let kv = KvMap::parse("bogus=1").unwrap();
        let err = kv.reject_unknown(&["levels"]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(kv.require::<usize>("levels").is_err());
        assert!(KvMap::parse("x=abc").unwrap().require::<f64>("x").is_err());
    }

    #[test]
    fn float_text_roundtrip_is_exact() {
        let mut kv = KvMap::new();
        let v = 0.1f64 + 0.2;
        kv.set("v", v);
        let back: f64 = KvMap::parse(&kv.to_text()).unwrap().require("v").unwrap();
        assert_eq!(back.to_bits(), v.to_bits());
    }
}
