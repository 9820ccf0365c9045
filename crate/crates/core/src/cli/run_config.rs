use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered `key=value` lines describing a run's effective configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` as `T`, naming `source` in errors.
    pub fn parse<T: std::str::FromStr>(&self, key: &str, source: &Path) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.get(key).ok_or_else(|| {
            Error::invalid("run config", format!("{} has no `{key}` entry", source.display()))
        })?;
        raw.parse()
            .map_err(|e| Error::invalid("run config", format!("{}: `{key}`: {e}", source.display())))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut out = Self::default();
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid("run config", format!("line {} is not key=value", i + 1)))?;
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(Error::invalid("run config", format!("duplicate key `{k}`")));
            }
            out.set(k, v);
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
