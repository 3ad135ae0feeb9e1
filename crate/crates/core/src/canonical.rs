//! Canonical JSON encoding and SHA-256 helpers.
//!
//! Canonical form: compact UTF-8 JSON with object keys in lexicographic
//! order. Routing every value through `serde_json::Value` (whose map is a
//! `BTreeMap`) gives the sorted key order for free.

use serde::Serialize;
use sha2::{Digest as _, Sha256};

/// Raw 32-byte SHA-256 digest.
pub type Digest = [u8; 32];

pub fn to_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Value {
    // Serialization of our own types never fails: no maps with non-string keys
    // reach this point.
    serde_json::to_value(value).expect("canonical encoding of a well-formed value")
}

pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    serde_json::to_vec(&to_value(value)).expect("serializing a JSON value")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_bytes(value)).expect("JSON is UTF-8")
}

pub fn sha256(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn hash_value<T: Serialize + ?Sized>(value: &T) -> Digest {
    sha256(&[&to_bytes(value)])
}

pub fn hex_digest(d: &Digest) -> String {
    hex::encode(d)
}

/// Parses a lowercase hex digest. Uppercase is rejected so that the textual
/// form stays canonical.
pub fn parse_hex_digest(s: &str) -> Option<Digest> {
    if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
        return None;
    }
    let mut out = [0u8; 32];
    hex::decode_to_slice(s, &mut out).ok()?;
    Some(out)
}

/// Serde adapter for `Digest` as lowercase hex.
pub mod hex_serde {
    use super::{parse_hex_digest, Digest};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Digest, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest, D::Error> {
        let s = String::deserialize(d)?;
        parse_hex_digest(&s).ok_or_else(|| serde::de::Error::custom("expected 64 lowercase hex chars"))
    }
}
