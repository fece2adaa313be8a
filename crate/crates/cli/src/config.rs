//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Keys are addressed as `section.key`; keys before the first header live
//! in the unnamed top-level section and are addressed by bare name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::fail::{input, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(input(format!("{source}:{}: unterminated section header `{line}`", i + 1)));
                };
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(input(format!("{source}:{}: expected `key = value`, found `{line}`", i + 1)));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(input(format!("{source}:{}: empty key", i + 1)));
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Values of `other` win.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<V: ToString>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| input(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Canonical rendering: top-level keys first, then sections in order.
    pub fn render(&self) -> String {
        let mut sections: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (k, v) in &self.values {
            let (sec, key) = k.split_once('.').unwrap_or(("", k));
            sections.entry(sec).or_default().push((key, v));
        }
        let mut s = String::new();
        for (sec, entries) in sections {
            if !sec.is_empty() {
                let _ = writeln!(s, "\n[{sec}]");
            }
            for (k, v) in entries {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s.trim_start().to_string()
    }
}
