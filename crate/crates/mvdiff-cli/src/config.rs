//! Run-configuration plumbing shared by all subcommands.
//!
//! Settings resolve in three layers: built-in defaults, then the flat
//! `key=value` file passed via `--config`, then individual CLI flags. The
//! [`ConfigBag`] holds the merged file+flag view; typed configs are then read
//! out of it with the library's `KvReader`, whose `finish()` call turns any
//! leftover (misspelled) key into a config error.

use std::collections::BTreeMap;
use std::path::Path;

use mvdiff::kv::{self, KvReader};
use mvdiff::{Error, Result};

pub struct ConfigBag {
    map: BTreeMap<String, String>,
}

impl ConfigBag {
    /// Loads the `--config` file if given, otherwise starts empty.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                kv::parse(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { map })
    }

    /// Unconditionally sets a key (CLI flags override file keys).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    /// Applies an optional CLI flag override.
    pub fn set_if<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    /// Hands the merged view to the typed readers.
    pub fn reader(self) -> KvReader {
        KvReader::new(self.map)
    }
}

/// Errors out if any of the listed keys is still present — used to reject
/// settings that are fixed by other inputs (e.g. architecture keys when
/// resuming from a checkpoint that already stores the architecture).
pub fn reject_keys(reader: &mut KvReader, keys: &[&str], why: &str) -> Result<()> {
    for key in keys {
        if reader.take(key).is_some() {
            return Err(Error::Config(format!("key {key:?} {why}")));
        }
    }
    Ok(())
}
