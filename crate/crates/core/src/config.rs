//! Flat `key = value` text configs: one entry per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One parsed entry with its 1-based source line (`None` for overrides).
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, Entry>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line), format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::config(Some(line), format!("invalid key '{key}'")));
            }
            let prev = entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: Some(line),
                },
            );
            if let Some(prev) = prev {
                return Err(Error::config(
                    Some(line),
                    format!("duplicate key '{key}' (first set on line {})", prev.line.unwrap_or(0)),
                ));
            }
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Set or replace a value; overrides carry no line number.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: None,
            },
        );
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), e))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Canonical form: keys sorted, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }

    /// Parse the value of `key` if present, reporting its line on failure.
    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| Error::config(e.line, format!("invalid value '{}' for {key}", e.value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = FlatConfig::parse("# header\n\nb = 3  # branches\ndelta=0.5\n").unwrap();
        assert_eq!(c.parse_value::<usize>("b").unwrap(), Some(3));
        assert_eq!(c.get("delta").unwrap().line, Some(4));
        assert_eq!(c.to_text(), "b = 3\ndelta = 0.5\n");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = FlatConfig::parse("b = 3\noops\n").unwrap_err();
        assert_eq!(e.to_string(), "config error at line 2: expected 'key = value', got 'oops'");
        let e = FlatConfig::parse("b = 3\nb = 4\n").unwrap_err();
        assert!(e.to_string().starts_with("config error at line 2"));
        let c = FlatConfig::parse("\n\nb = three\n").unwrap();
        let e = c.parse_value::<usize>("b").unwrap_err();
        assert!(e.to_string().starts_with("config error at line 3"));
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = FlatConfig::parse("z = 1\na = x y\n").unwrap();
        c.set("m", 0.25);
        let again = FlatConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
    }
}
