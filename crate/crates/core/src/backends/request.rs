use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Generate,
    Vqa,
    Equivalence,
    EmbedImage,
    EmbedText,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Vqa => "vqa",
            Self::Equivalence => "equivalence",
            Self::EmbedImage => "embed_image",
            Self::EmbedText => "embed_text",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical JSON: object keys sorted by byte order, no insignificant
/// whitespace, strings and numbers as serde_json prints them.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                write_canonical(&map[k.as_str()], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).unwrap()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One oracle query. `sample_index` separates repeated stochastic draws of
/// the same payload and is not part of the hash.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub kind: BackendKind,
    pub payload: Value,
    pub sample_index: u32,
}

impl BackendRequest {
    pub fn new(kind: BackendKind, payload: Value, sample_index: u32) -> Self {
        Self { kind, payload, sample_index }
    }

    /// SHA-256 over `"{kind}\n{canonical payload}"`, lowercase hex.
    pub fn hash(&self) -> String {
        request_hash(self.kind, &self.payload)
    }
}

pub fn request_hash(kind: BackendKind, payload: &Value) -> String {
    let text = format!("{}\n{}", kind.as_str(), canonical_json(payload));
    sha256_hex(text.as_bytes())
}
