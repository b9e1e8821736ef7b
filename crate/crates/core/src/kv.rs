//! Plain-text `key=value` configuration files.
//!
//! One entry per line, `#` starts a comment, surrounding whitespace is
//! ignored. Keys keep their file order so a config can be re-emitted
//! unchanged.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: Vec<(String, String)>,
    base_dir: Option<PathBuf>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::malformed("config", format!("line {}: expected key=value", lineno + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::malformed("config", format!("line {}: empty key", lineno + 1)));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths in it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(Error::at(path))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::invalid(format!("config key {key}: {e}"))),
        }
    }

    pub fn parse_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.parse_value(key)?.unwrap_or(default))
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::invalid(format!("missing config key {key}")))
    }

    /// Resolves a path-valued key against the directory the config was loaded from.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.resolve(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.require(key).map(|v| self.resolve(v))
    }

    pub fn resolve(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        match (&self.base_dir, p.is_relative()) {
            (Some(base), true) => base.join(p),
            _ => p,
        }
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = Some(dir.into());
    }

    /// Merges `other` on top of `self`; later keys win.
    pub fn merged(mut self, other: &KvConfig) -> Self {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
        self
    }
}

/// Parses a comma-separated list of values.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|e| Error::invalid(format!("list item {t:?}: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = KvConfig::parse("# header\n a = 1 \n\nb=two # trailing\n").unwrap();
        assert_eq!(cfg.get("a"), Some("1"));
        assert_eq!(cfg.get("b"), Some("two"));
        assert_eq!(cfg.parse_or::<u32>("a", 0).unwrap(), 1);
        assert_eq!(cfg.parse_or::<u32>("missing", 7).unwrap(), 7);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KvConfig::parse("nonsense\n").is_err());
    }

    #[test]
    fn text_round_trip_preserves_order() {
        let mut cfg = KvConfig::new();
        cfg.set("z", 1);
        cfg.set("a", "x");
        cfg.set("z", 2);
        let again = KvConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again.keys().collect::<Vec<_>>(), vec!["z", "a"]);
        assert_eq!(again.get("z"), Some("2"));
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let mut cfg = KvConfig::parse("p=data/x.rstr\nq=/abs/y.rstr\n").unwrap();
        cfg.set_base_dir("/root/run");
        assert_eq!(cfg.path("p").unwrap(), PathBuf::from("/root/run/data/x.rstr"));
        assert_eq!(cfg.path("q").unwrap(), PathBuf::from("/abs/y.rstr"));
    }
}
