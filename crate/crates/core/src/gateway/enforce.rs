//! Protocol enforcement on payloads in transit.
//!
//! Write path: mask the configured fields, encrypt under the owner's key,
//! then wrap in an envelope whose digest covers the bytes as stored. Read
//! path: verify the digest, then decrypt.

use crate::error::{Error, Result};
use crate::security::envelope::{Envelope, EnvelopeFlags};
use crate::security::{ProtocolSet, SecurityEngine};

/// What enforcement needs to know about a payload's dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protection {
    pub protocols: ProtocolSet,
    pub owner: String,
}

pub fn enforce(sec: &SecurityEngine, payload: &[u8], p: &Protection) -> Result<Vec<u8>> {
    let mut body = payload.to_vec();
    if p.protocols.anonymize {
        body = sec.anonymizer().mask(&body, &p.protocols.anonymize_fields)?;
    }
    if p.protocols.encrypt {
        body = sec.cipher().seal(&p.owner, &body)?;
    }
    let env = Envelope {
        flags: EnvelopeFlags {
            integrity: p.protocols.integrity,
            anonymized: p.protocols.anonymize,
            encrypted: p.protocols.encrypt,
        },
        owner: p.owner.clone(),
        body,
    };
    env.encode()
}

/// Verifies and unwraps a stored payload for an authorized reader.
pub fn invert(sec: &SecurityEngine, stored: &[u8]) -> Result<Vec<u8>> {
    if !Envelope::has_marker(stored) {
        return Err(Error::IntegrityViolation("stored payload carries no enforcement marker".into()));
    }
    let env = Envelope::decode(stored)?;
    if env.flags.encrypted {
        return sec
            .cipher()
            .open(&env.owner, &env.body)
            .map_err(|e| Error::IntegrityViolation(format!("decryption failed: {}", e.detail())));
    }
    Ok(env.body)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::security::DataClass;

    fn protection(class: DataClass) -> Protection {
        let mut protocols = ProtocolSet::default_for(class);
        protocols.anonymize_fields = vec!["user_name".into()];
        Protection { protocols, owner: "app1".into() }
    }

    #[test]
    fn federation_payload_keeps_bytes_and_gains_a_digest() {
        let sec = SecurityEngine::new();
        let stored = enforce(&sec, b"cpu=0.4", &protection(DataClass::Federation)).unwrap();
        let env = Envelope::decode(&stored).unwrap();
        assert_eq!(env.body, b"cpu=0.4");
        assert!(!env.flags.encrypted);
        assert_eq!(Envelope::attached_digest(&stored).map(|d| d.len()), Some(32));
        assert_eq!(invert(&sec, &stored).unwrap(), b"cpu=0.4");
    }

    #[test]
    fn application_payload_is_masked_and_encrypted() {
        let sec = SecurityEngine::new();
        let input = br#"{"user_name":"kim","score":3}"#;
        let stored = enforce(&sec, input, &protection(DataClass::Application)).unwrap();
        assert!(!stored.windows(3).any(|w| w == b"kim"));
        let back: serde_json::Value = serde_json::from_slice(&invert(&sec, &stored).unwrap()).unwrap();
        assert_eq!(back["score"], 3);
        assert!(back["user_name"].as_str().unwrap().starts_with("anon:"));
    }

    #[test]
    fn unprotected_bytes_are_refused_on_read() {
        let sec = SecurityEngine::new();
        assert!(matches!(invert(&sec, b"plain"), Err(Error::IntegrityViolation(_))));
    }

    proptest! {
        #[test]
        fn any_single_bit_flip_is_detected(
            payload in proptest::collection::vec(any::<u8>(), 0..64),
            app in any::<bool>(),
            pos in any::<prop::sample::Index>(),
            bit in 0u8..8,
        ) {
            let sec = SecurityEngine::new();
            let class = if app { DataClass::Application } else { DataClass::Monitoring };
            let mut stored = enforce(&sec, &payload, &protection(class)).unwrap();
            prop_assert_eq!(invert(&sec, &stored).unwrap(), if app {
                sec.anonymizer().mask(&payload, &["user_name".to_string()]).unwrap()
            } else {
                payload.clone()
            });
            let i = pos.index(stored.len());
            stored[i] ^= 1 << bit;
            prop_assert!(matches!(invert(&sec, &stored), Err(Error::IntegrityViolation(_))));
        }
    }
}
