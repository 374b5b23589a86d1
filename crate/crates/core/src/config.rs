//! Flat key-value config files: `key = value` lines, `#` comments.
//!
//! Readers take keys they know; anything left over is an unknown key and a
//! hard error, so typos in config files never pass silently.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KvFile {
    pub fn parse(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn parse_str(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                path: path.clone(),
                line: lineno + 1,
                reason: "expected \"key = value\"".into(),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::ConfigParse {
                    path: path.clone(),
                    line: lineno + 1,
                    reason: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (value.trim().to_string(), lineno + 1)).is_some() {
                return Err(Error::ConfigParse {
                    path: path.clone(),
                    line: lineno + 1,
                    reason: format!("duplicate key \"{key}\""),
                });
            }
        }
        Ok(Self { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Remaining (unconsumed) keys in sorted order.
    pub fn keys(&self) -> Vec<&str> {
        self.entries.keys().map(|s| s.as_str()).collect()
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse::<T>().map_err(|_| Error::ConfigParse {
            path: self.path.clone(),
            line: 0,
            reason: format!("key \"{key}\": cannot parse \"{raw}\""),
        })
    }

    pub fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take_raw(key) {
            Some(raw) => self.parse_value(key, &raw),
            None => Ok(default),
        }
    }

    pub fn take_list_or<T: std::str::FromStr>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        match self.take_raw(key) {
            Some(raw) => {
                raw.split(',').map(|tok| self.parse_value(key, tok.trim())).collect()
            }
            None => Ok(default.to_vec()),
        }
    }

    /// All remaining entries as (key, value); consumes them.
    pub fn drain(&mut self) -> Vec<(String, String)> {
        std::mem::take(&mut self.entries).into_iter().map(|(k, (v, _))| (k, v)).collect()
    }

    /// Error if any keys were never consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(Error::UnknownConfigKey { path: self.path, key: key.clone() });
        }
        Ok(())
    }
}

/// Write a key-value file (run manifests); keys emitted in the given order.
pub fn write_kv(path: impl AsRef<Path>, pairs: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let mut kv = KvFile::parse_str("a = 1 # trailing\n# full line\n b = 2.5 \n", "test.cfg").unwrap();
        assert_eq!(kv.take_or("a", 0u32).unwrap(), 1);
        assert_eq!(kv.take_or("b", 0.0f64).unwrap(), 2.5);
        kv.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let kv = KvFile::parse_str("mystery = 1\n", "test.cfg").unwrap();
        assert!(matches!(kv.finish(), Err(Error::UnknownConfigKey { .. })));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(KvFile::parse_str("a = 1\na = 2\n", "t.cfg").is_err());
    }

    #[test]
    fn lists_parse() {
        let mut kv = KvFile::parse_str("dims = 4, 5, 6\n", "t.cfg").unwrap();
        assert_eq!(kv.take_list_or("dims", &[0usize]).unwrap(), vec![4, 5, 6]);
        kv.finish().unwrap();
    }
}
