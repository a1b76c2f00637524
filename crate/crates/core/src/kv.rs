//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, values may be wrapped in double
//! quotes. Keys are unique; repeating one is an error so typos in overrides
//! do not go unnoticed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    origin: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(body: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in body.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(origin, i + 1, "empty key"));
            }
            let value = unquote(value.trim());
            if entries.insert(key.to_string(), (i + 1, value)).is_some() {
                return Err(Error::parse(origin, i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(KvFile {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body, &path.display().to_string())
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::parse(&self.origin, *line, format!("bad value for `{key}`: {e}"))),
        }
    }

    /// Comma-separated list; an empty value yields an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::parse(&self.origin, *line, format!("bad item {s:?} in `{key}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Keys not in `known`, for unknown-key diagnostics.
    pub fn unknown_keys<'a>(&'a self, known: &[&str]) -> Vec<&'a str> {
        self.keys().filter(|k| !known.contains(k)).collect()
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> String {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        v[1..v.len() - 1].to_string()
    } else {
        v.to_string()
    }
}
