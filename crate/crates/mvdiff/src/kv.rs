//! Flat `key=value` text format used by run configs, dataset manifests and
//! the config block embedded in checkpoints. One pair per line, `#` starts a
//! comment, keys may not repeat.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parses `key=value` text. Duplicate keys and lines without `=` are errors.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
    }
    Ok(map)
}

/// Formats pairs in the given order, one per line.
pub fn format(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Typed accessors that consume keys from a parsed map, so callers can detect
/// unknown leftovers afterwards.
pub struct KvReader {
    map: BTreeMap<String, String>,
}

impl KvReader {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        Self { map }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(Self::new(parse(text)?))
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("key {key:?}: cannot parse value {v:?}"))),
        }
    }

    pub fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take_parsed(key)?.unwrap_or(default))
    }

    pub fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.take_parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    /// Errors if any keys were never consumed; lists them all.
    pub fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<_> = self.map.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}

/// Parses `true|false|1|0` into a bool; stricter than `str::parse`.
pub fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected bool, got {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let m = parse("# header\n\na=1\n b = two \n").unwrap();
        assert_eq!(m.get("a").unwrap(), "1");
        assert_eq!(m.get("b").unwrap(), "two");
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse("a=1\na=2\n").is_err());
    }

    #[test]
    fn missing_equals_rejected() {
        assert!(parse("just words\n").is_err());
    }

    #[test]
    fn reader_flags_unknown_keys() {
        let mut r = KvReader::from_text("a=1\nmystery=2\n").unwrap();
        let _: u32 = r.require("a").unwrap();
        let err = r.finish().unwrap_err().to_string();
        assert!(err.contains("mystery"), "{err}");
    }

    #[test]
    fn roundtrip() {
        let pairs = vec![("x".to_string(), "1.5".to_string()), ("y".to_string(), "z".to_string())];
        let text = format(&pairs);
        let m = parse(&text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("x").unwrap(), "1.5");
    }
}
