//! Serde helpers for fixed 32-byte arrays written as hex strings.

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
    let s = String::deserialize(d)?;
    let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
    <[u8; 32]>::try_from(raw.as_slice())
        .map_err(|_| serde::de::Error::custom(format!("expected 32 bytes, got {}", raw.len())))
}
