use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Where a key string came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeySource {
    UserMeasured,
    ServerDerived,
    Reconciled,
    Combined,
    Decrypted,
}

/// An N-bit key. Immutable once created.
///
/// Deliberately not serializable; `Debug` prints only a fingerprint.
/// Equality compares the bits only.
#[derive(Clone)]
pub struct KeyString {
    bits: Vec<u8>,
    derived_at: f64,
    source: KeySource,
}

impl PartialEq for KeyString {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits
    }
}

impl Eq for KeyString {}

impl fmt::Debug for KeyString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyString")
            .field("len", &self.bits.len())
            .field("fingerprint", &self.fingerprint())
            .field("source", &self.source)
            .finish()
    }
}

impl KeyString {
    /// `bits` must contain only 0 and 1.
    pub fn new(bits: Vec<u8>, derived_at: f64, source: KeySource) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::MalformedRequest(format!("key bit {pos} is not 0/1")));
        }
        Ok(KeyString {
            bits,
            derived_at,
            source,
        })
    }

    pub(crate) fn from_trusted(bits: Vec<u8>, derived_at: f64, source: KeySource) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        KeyString {
            bits,
            derived_at,
            source,
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn derived_at(&self) -> f64 {
        self.derived_at
    }

    pub fn source(&self) -> KeySource {
        self.source
    }

    /// Packs the bits MSB-first; the final byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        pack_bits(&self.bits)
    }

    pub fn hamming_distance(&self, other: &KeyString) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    /// Short SHA-256 digest of the bits, safe to print in transcripts.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.bits.len() as u32).to_be_bytes());
        h.update(self.to_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i))))
        .collect()
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Result<Vec<u8>> {
    if bytes.len() * 8 < len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: bytes.len() * 8,
        });
    }
    Ok((0..len).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect())
}

/// The public tuple `(O, H, t)` a user broadcasts after measuring.
///
/// Indices are 0-based here and 1-based on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireRequest", into = "WireRequest")]
pub struct KeyRequest {
    pub user_id: String,
    pub chipset_id: String,
    pub key_indices: Vec<usize>,
    pub hash_indices: Vec<usize>,
    pub t: f64,
    /// CRC remainder of the user's key, hex encoded, when reconciliation is used.
    pub crc: Option<String>,
}

impl KeyRequest {
    /// Checks distinctness and disjointness; `capacity` bounds the indices
    /// when known.
    pub fn validate(&self, capacity: Option<usize>) -> Result<()> {
        if !(self.t >= 0.0) || !self.t.is_finite() {
            return Err(Error::MalformedRequest(format!("sample time {} is invalid", self.t)));
        }
        if self.key_indices.is_empty() {
            return Err(Error::MalformedRequest("no key timers".into()));
        }
        let mut seen = std::collections::HashMap::new();
        for (role, list) in [("O", &self.key_indices), ("H", &self.hash_indices)] {
            for &i in list {
                if let Some(cap) = capacity {
                    if i >= cap {
                        return Err(Error::MalformedRequest(format!("index {} outside 1..={cap}", i + 1)));
                    }
                }
                if let Some(prev) = seen.insert(i, role) {
                    let what = if prev == role { "repeated in" } else { "shared by O and" };
                    return Err(Error::MalformedRequest(format!("index {} {what} {role}", i + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Every timer index the request touches.
    pub fn touched(&self) -> impl Iterator<Item = usize> + '_ {
        self.key_indices.iter().chain(&self.hash_indices).copied()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRequest {
    user_id: String,
    chipset_id: String,
    #[serde(rename = "O")]
    key_indices: Vec<usize>,
    #[serde(rename = "H")]
    hash_indices: Vec<usize>,
    t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crc: Option<String>,
}

impl From<KeyRequest> for WireRequest {
    fn from(r: KeyRequest) -> Self {
        WireRequest {
            user_id: r.user_id,
            chipset_id: r.chipset_id,
            key_indices: r.key_indices.iter().map(|i| i + 1).collect(),
            hash_indices: r.hash_indices.iter().map(|i| i + 1).collect(),
            t: r.t,
            crc: r.crc,
        }
    }
}

impl TryFrom<WireRequest> for KeyRequest {
    type Error = Error;

    fn try_from(w: WireRequest) -> Result<Self> {
        let to_zero_based = |v: Vec<usize>| -> Result<Vec<usize>> {
            v.into_iter()
                .map(|i| {
                    i.checked_sub(1)
                        .ok_or_else(|| Error::MalformedRequest("timer index 0 on the wire".into()))
                })
                .collect()
        };
        if let Some(hex) = &w.crc {
            if hex.is_empty() || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::MalformedRequest(format!("crc {hex:?} is not hex")));
            }
        }
        Ok(KeyRequest {
            user_id: w.user_id,
            chipset_id: w.chipset_id,
            key_indices: to_zero_based(w.key_indices)?,
            hash_indices: to_zero_based(w.hash_indices)?,
            t: w.t,
            crc: w.crc,
        })
    }
}
