//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    values: BTreeMap<String, String>,
}

impl FlatConfig {
    /// `#` starts a comment; blank lines are skipped; keys are unique.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
            let k = k.trim();
            if k.is_empty() {
                bail!("config line {}: empty key", i + 1);
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                bail!("config line {}: duplicate key {k}", i + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| path.display().to_string())
    }

    /// Rejects keys outside `known` (entries ending in `*` match a prefix).
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for k in self.values.keys() {
            let ok = known.iter().any(|p| match p.strip_suffix('*') {
                Some(prefix) => k.starts_with(prefix),
                None => k == p,
            });
            if !ok {
                bail!("unknown config key {k:?}");
            }
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: {e}")))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<T>().map_err(|e| anyhow!("config key {key}: {e}")))
                    .collect()
            })
            .transpose()
    }

    pub fn entries_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.values
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let c = FlatConfig::parse("# hi\nmax_epochs = 12\n\nu_widths=8, 16 # inline\n").unwrap();
        assert_eq!(c.get::<usize>("max_epochs").unwrap(), Some(12));
        assert_eq!(c.get_list::<usize>("u_widths").unwrap(), Some(vec![8, 16]));
        assert_eq!(c.get::<usize>("missing").unwrap(), None);
        assert!(c.check_keys(&["max_epochs"]).is_err());
        assert!(c.check_keys(&["max_epochs", "u_*"]).is_ok());
    }

    #[test]
    fn rejects_malformed() {
        assert!(FlatConfig::parse("novalue\n").is_err());
        assert!(FlatConfig::parse("a=1\na=2\n").is_err());
        let c = FlatConfig::parse("n = x").unwrap();
        assert!(c.get::<usize>("n").is_err());
    }
}
