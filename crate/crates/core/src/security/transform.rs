//! Pluggable protection transforms and their reference implementations.

use std::collections::HashMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use parking_lot::Mutex;
use rand::RngCore;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ANON_PREFIX: &str = "anon:";

/// Irreversible masking of selected fields.
pub trait Anonymizer: Send + Sync {
    /// Returns the masked payload. Payloads that are not JSON objects pass
    /// through unchanged since there are no fields to mask.
    fn mask(&self, payload: &[u8], fields: &[String]) -> Result<Vec<u8>>;
}

/// Keyed, authenticated, invertible byte transform.
pub trait Cipher: Send + Sync {
    fn seal(&self, owner: &str, plaintext: &[u8]) -> Result<Vec<u8>>;
    fn open(&self, owner: &str, sealed: &[u8]) -> Result<Vec<u8>>;
}

/// Replaces each listed top-level field with a salted SHA-256 digest.
pub struct FieldMasker {
    salt: Vec<u8>,
}

impl FieldMasker {
    pub fn new(salt: impl Into<Vec<u8>>) -> Self {
        FieldMasker { salt: salt.into() }
    }

    fn mask_value(&self, field: &str, v: &Value) -> Value {
        let mut h = Sha256::new();
        h.update(&self.salt);
        h.update(field.as_bytes());
        h.update([0]);
        h.update(v.to_string().as_bytes());
        Value::String(format!("{ANON_PREFIX}{}", hex::encode(&h.finalize()[..16])))
    }
}

impl Anonymizer for FieldMasker {
    fn mask(&self, payload: &[u8], fields: &[String]) -> Result<Vec<u8>> {
        if fields.is_empty() {
            return Ok(payload.to_vec());
        }
        let Ok(Value::Object(mut doc)) = serde_json::from_slice::<Value>(payload) else {
            return Ok(payload.to_vec());
        };
        let mut changed = false;
        for f in fields {
            if let Some(v) = doc.get(f) {
                if v.as_str().is_some_and(|s| s.starts_with(ANON_PREFIX)) {
                    continue;
                }
                let masked = self.mask_value(f, v);
                doc.insert(f.clone(), masked);
                changed = true;
            }
        }
        if !changed {
            return Ok(payload.to_vec());
        }
        serde_json::to_vec(&Value::Object(doc)).map_err(|e| Error::TransformFailure(e.to_string()))
    }
}

/// ChaCha20-Poly1305 with one key per owner derived from a master secret.
///
/// Sealed layout: 12-byte random nonce followed by ciphertext and tag. The
/// owner id is bound as associated data.
pub struct OwnerKeyCipher {
    master: [u8; 32],
    keys: Mutex<HashMap<String, Key>>,
}

impl OwnerKeyCipher {
    pub fn new(master: [u8; 32]) -> Self {
        OwnerKeyCipher { master, keys: Mutex::new(HashMap::new()) }
    }

    pub fn random() -> Self {
        let mut master = [0u8; 32];
        rand::rng().fill_bytes(&mut master);
        Self::new(master)
    }

    fn key(&self, owner: &str) -> Key {
        let mut keys = self.keys.lock();
        *keys.entry(owner.to_owned()).or_insert_with(|| {
            let mut h = Sha256::new();
            h.update(self.master);
            h.update(b"owner-key");
            h.update(owner.as_bytes());
            let k: [u8; 32] = h.finalize().into();
            Key::from(k)
        })
    }
}

impl Cipher for OwnerKeyCipher {
    fn seal(&self, owner: &str, plaintext: &[u8]) -> Result<Vec<u8>> {
        let cipher = ChaCha20Poly1305::new(&self.key(owner));
        let mut nonce = [0u8; 12];
        rand::rng().fill_bytes(&mut nonce);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: owner.as_bytes() })
            .map_err(|_| Error::TransformFailure("encryption failed".into()))?;
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        Ok(out)
    }

    fn open(&self, owner: &str, sealed: &[u8]) -> Result<Vec<u8>> {
        if sealed.len() < 12 + 16 {
            return Err(Error::IntegrityViolation("ciphertext truncated".into()));
        }
        let (nonce, ct) = sealed.split_at(12);
        let cipher = ChaCha20Poly1305::new(&self.key(owner));
        cipher
            .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: owner.as_bytes() })
            .map_err(|_| Error::IntegrityViolation("ciphertext failed authentication".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masking_hides_listed_fields_only() {
        let m = FieldMasker::new(b"salt".to_vec());
        let out = m
            .mask(br#"{"user_name":"alice","city":"Karlsruhe"}"#, &["user_name".into()])
            .unwrap();
        let v: Value = serde_json::from_slice(&out).unwrap();
        assert!(v["user_name"].as_str().unwrap().starts_with(ANON_PREFIX));
        assert_eq!(v["city"], "Karlsruhe");
        assert!(!String::from_utf8(out.clone()).unwrap().contains("alice"));
        // idempotent
        assert_eq!(m.mask(&out, &["user_name".into()]).unwrap(), out);
        // non-JSON passes through
        assert_eq!(m.mask(b"\x00\x01", &["user_name".into()]).unwrap(), b"\x00\x01");
    }

    #[test]
    fn cipher_round_trip_and_owner_binding() {
        let c = OwnerKeyCipher::new([7; 32]);
        let sealed = c.seal("app1", b"secret").unwrap();
        assert_ne!(&sealed[12..], b"secret");
        assert_eq!(c.open("app1", &sealed).unwrap(), b"secret");
        assert!(c.open("app2", &sealed).is_err());
        let mut t = sealed.clone();
        t[15] ^= 1;
        assert!(matches!(c.open("app1", &t), Err(Error::IntegrityViolation(_))));
    }
}
