//! Session-key combiner and the symmetric cipher used to ship `K_R`.
//!
//! Both are traits so a production primitive can be slotted in. The defaults
//! are built on HMAC-SHA256: a counter-mode PRF for the combiner, and an
//! encrypt-then-MAC construction (HMAC keystream, HMAC tag) for the cipher.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::{Rng, RngCore};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::protocol::key::{KeySource, KeyString};

type HmacSha256 = Hmac<Sha256>;

const NONCE_LEN: usize = 16;
const TAG_LEN: usize = 32;

/// Per-session combiner key. Never serialized, never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct CombinerSecret([u8; 32]);

impl CombinerSecret {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        CombinerSecret(k)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        CombinerSecret(bytes)
    }
}

impl fmt::Debug for CombinerSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CombinerSecret(..)")
    }
}

fn mac(key: &[u8]) -> HmacSha256 {
    <HmacSha256 as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length")
}

/// Derives `K_R` from the two users' keys.
pub trait Combiner: Send + Sync {
    fn combine(&self, a: &KeyString, b: &KeyString, secret: &CombinerSecret) -> Result<KeyString>;
}

/// `K_R = PRF_secret(K_A || K_B)`, expanded in counter mode to N bits.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrfCombiner;

impl Combiner for PrfCombiner {
    fn combine(&self, a: &KeyString, b: &KeyString, secret: &CombinerSecret) -> Result<KeyString> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
        let n = a.len();
        let mut out = Vec::with_capacity(n);
        let mut counter = 0u32;
        while out.len() < n {
            let mut m = mac(&secret.0);
            m.update(b"spotkd/combine");
            m.update(&counter.to_be_bytes());
            m.update(&(n as u32).to_be_bytes());
            m.update(&a.to_bytes());
            m.update(&b.to_bytes());
            let block = m.finalize().into_bytes();
            for byte in block.iter() {
                for shift in (0..8).rev() {
                    if out.len() < n {
                        out.push((byte >> shift) & 1);
                    }
                }
            }
            counter += 1;
        }
        Ok(KeyString::from_trusted(
            out,
            a.derived_at().max(b.derived_at()),
            KeySource::Combined,
        ))
    }
}

pub fn combine_keys(a: &KeyString, b: &KeyString, secret: &CombinerSecret) -> Result<KeyString> {
    PrfCombiner.combine(a, b, secret)
}

/// Authenticated symmetric encryption keyed by a [`KeyString`].
pub trait Cipher: Send + Sync {
    fn encrypt(&self, key: &KeyString, plaintext: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>>;
    fn decrypt(&self, key: &KeyString, ciphertext: &[u8]) -> Result<Vec<u8>>;
}

/// Layout: `nonce (16) || body || tag (32)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HmacStreamCipher;

impl HmacStreamCipher {
    fn subkey(key: &KeyString, label: &[u8]) -> [u8; 32] {
        let mut m = mac(label);
        m.update(&(key.len() as u32).to_be_bytes());
        m.update(&key.to_bytes());
        m.finalize().into_bytes().into()
    }

    fn apply_keystream(enc_key: &[u8; 32], nonce: &[u8], data: &mut [u8]) {
        for (ctr, chunk) in data.chunks_mut(32).enumerate() {
            let mut m = mac(enc_key);
            m.update(nonce);
            m.update(&(ctr as u64).to_be_bytes());
            let ks = m.finalize().into_bytes();
            for (d, k) in chunk.iter_mut().zip(ks.iter()) {
                *d ^= k;
            }
        }
    }

    fn tag(mac_key: &[u8; 32], nonce: &[u8], body: &[u8]) -> HmacSha256 {
        let mut m = mac(mac_key);
        m.update(nonce);
        m.update(body);
        m
    }
}

impl Cipher for HmacStreamCipher {
    fn encrypt(&self, key: &KeyString, plaintext: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>> {
        let enc_key = Self::subkey(key, b"spotkd/enc");
        let mac_key = Self::subkey(key, b"spotkd/mac");
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let mut body = plaintext.to_vec();
        Self::apply_keystream(&enc_key, &nonce, &mut body);
        let tag = Self::tag(&mac_key, &nonce, &body).finalize().into_bytes();

        let mut out = Vec::with_capacity(NONCE_LEN + body.len() + TAG_LEN);
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&body);
        out.extend_from_slice(&tag);
        Ok(out)
    }

    fn decrypt(&self, key: &KeyString, ciphertext: &[u8]) -> Result<Vec<u8>> {
        if ciphertext.len() < NONCE_LEN + TAG_LEN {
            return Err(Error::AuthenticationFailed);
        }
        let (nonce, rest) = ciphertext.split_at(NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
        let mac_key = Self::subkey(key, b"spotkd/mac");
        Self::tag(&mac_key, nonce, body)
            .verify_slice(tag)
            .map_err(|_| Error::AuthenticationFailed)?;
        let enc_key = Self::subkey(key, b"spotkd/enc");
        let mut plain = body.to_vec();
        Self::apply_keystream(&enc_key, nonce, &mut plain);
        Ok(plain)
    }
}

pub fn encrypt<R: RngCore>(key: &KeyString, plaintext: &[u8], rng: &mut R) -> Result<Vec<u8>> {
    HmacStreamCipher.encrypt(key, plaintext, rng)
}

pub fn decrypt(key: &KeyString, ciphertext: &[u8]) -> Result<Vec<u8>> {
    HmacStreamCipher.decrypt(key, ciphertext)
}
