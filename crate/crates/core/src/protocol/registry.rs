//! Gateway-side credential store, keyed by edge id hash.
//!
//! Persisted as a JSON object mapping hex id hash to
//! `{"e_init": hex, "seed": hex, "draw_index": n}`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProtocolError;
use crate::crypto::{Key256, Seed};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RegistryEntry {
    pub e_init: Key256,
    pub seed: Seed,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    e_init: Key256,
    #[serde(with = "crate::hexser")]
    seed: [u8; 32],
    draw_index: u64,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry io: {0}")]
    Io(#[from] io::Error),
    #[error("registry parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("registry key {0:?} is not a 32-byte hex id hash")]
    BadKey(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<Key256, RegistryEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id_hash: &Key256) -> bool {
        self.entries.contains_key(id_hash)
    }

    pub fn get(&self, id_hash: &Key256) -> Option<&RegistryEntry> {
        self.entries.get(id_hash)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key256, &RegistryEntry)> {
        self.entries.iter()
    }

    /// Add a new edge. Re-registering an id is refused.
    pub fn insert_new(&mut self, id_hash: Key256, entry: RegistryEntry) -> Result<(), ProtocolError> {
        if self.entries.contains_key(&id_hash) {
            return Err(ProtocolError::DuplicateEnrollment);
        }
        self.entries.insert(id_hash, entry);
        Ok(())
    }

    pub(crate) fn replace(&mut self, id_hash: Key256, entry: RegistryEntry) {
        self.entries.insert(id_hash, entry);
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, EntryRecord> = self
            .entries
            .iter()
            .map(|(k, e)| {
                (
                    k.to_hex(),
                    EntryRecord {
                        e_init: e.e_init,
                        seed: *e.seed.bytes(),
                        draw_index: e.seed.draw_index(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let map: BTreeMap<String, EntryRecord> = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for (k, rec) in map {
            let id = Key256::from_hex(&k).ok_or_else(|| RegistryError::BadKey(k.clone()))?;
            entries.insert(
                id,
                RegistryEntry {
                    e_init: rec.e_init,
                    seed: Seed::at_index(rec.seed, rec.draw_index),
                },
            );
        }
        Ok(Self { entries })
    }

    /// Load a registry file; a missing file is an empty registry.
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        match fs::read_to_string(path) {
            Ok(text) if text.trim().is_empty() => Ok(Self::new()),
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
