//! Binary container for payloads at rest.
//!
//! ```text
//! magic "BDMF" | version u8 | flags u8 | owner_len u16 | owner | body_len u32 | body | [digest 32]
//! ```
//!
//! The digest, present when the integrity flag is set, is SHA-256 over every
//! byte before it. All integers are big-endian.

use crate::codec::{digest, Digest};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BDMF";
pub const VERSION: u8 = 1;

const FLAG_INTEGRITY: u8 = 0b001;
const FLAG_ANONYMIZED: u8 = 0b010;
const FLAG_ENCRYPTED: u8 = 0b100;
const KNOWN_FLAGS: u8 = FLAG_INTEGRITY | FLAG_ANONYMIZED | FLAG_ENCRYPTED;

const MAX_OWNER: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvelopeFlags {
    pub integrity: bool,
    pub anonymized: bool,
    pub encrypted: bool,
}

impl EnvelopeFlags {
    fn bits(self) -> u8 {
        (self.integrity as u8 * FLAG_INTEGRITY)
            | (self.anonymized as u8 * FLAG_ANONYMIZED)
            | (self.encrypted as u8 * FLAG_ENCRYPTED)
    }

    fn from_bits(b: u8) -> Option<Self> {
        if b & !KNOWN_FLAGS != 0 {
            return None;
        }
        Some(EnvelopeFlags {
            integrity: b & FLAG_INTEGRITY != 0,
            anonymized: b & FLAG_ANONYMIZED != 0,
            encrypted: b & FLAG_ENCRYPTED != 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub flags: EnvelopeFlags,
    /// Dataset owner; selects the decryption key.
    pub owner: String,
    pub body: Vec<u8>,
}

impl Envelope {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.owner.len() > MAX_OWNER {
            return Err(Error::TransformFailure("owner id too long".into()));
        }
        let body_len = u32::try_from(self.body.len())
            .map_err(|_| Error::TransformFailure("payload too large".into()))?;
        let mut out = Vec::with_capacity(4 + 2 + 2 + self.owner.len() + 4 + self.body.len() + 32);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.flags.bits());
        out.extend_from_slice(&(self.owner.len() as u16).to_be_bytes());
        out.extend_from_slice(self.owner.as_bytes());
        out.extend_from_slice(&body_len.to_be_bytes());
        out.extend_from_slice(&self.body);
        if self.flags.integrity {
            let d = digest(&out);
            out.extend_from_slice(&d);
        }
        Ok(out)
    }

    /// Decodes and, when the integrity flag is set, verifies the digest.
    pub fn decode(bytes: &[u8]) -> Result<Envelope> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::IntegrityViolation("missing envelope marker".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::IntegrityViolation(format!("unsupported envelope version {version}")));
        }
        let flags = EnvelopeFlags::from_bits(r.u8()?)
            .ok_or_else(|| Error::IntegrityViolation("unknown envelope flags".into()))?;
        let owner_len = r.u16()? as usize;
        let owner = std::str::from_utf8(r.take(owner_len)?)
            .map_err(|_| Error::IntegrityViolation("owner is not UTF-8".into()))?
            .to_owned();
        let body_len = r.u32()? as usize;
        let body = r.take(body_len)?.to_vec();
        let covered = r.pos;
        if flags.integrity {
            let stored: Digest = r
                .take(32)?
                .try_into()
                .expect("take(32) yields 32 bytes");
            if digest(&bytes[..covered]) != stored {
                return Err(Error::IntegrityViolation("content digest mismatch".into()));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::IntegrityViolation("trailing bytes after envelope".into()));
        }
        Ok(Envelope { flags, owner, body })
    }

    /// Cheap check for the enforcement marker, without verifying anything.
    pub fn has_marker(bytes: &[u8]) -> bool {
        bytes.len() >= 5 && &bytes[..4] == MAGIC && bytes[4] == VERSION
    }

    /// The digest attached to an encoded envelope, if any.
    pub fn attached_digest(bytes: &[u8]) -> Option<Digest> {
        let env = Envelope::decode(bytes).ok()?;
        if !env.flags.integrity {
            return None;
        }
        bytes[bytes.len() - 32..].try_into().ok()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::IntegrityViolation("truncated envelope".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn env(body: &[u8]) -> Envelope {
        Envelope {
            flags: EnvelopeFlags { integrity: true, anonymized: false, encrypted: false },
            owner: "app1".into(),
            body: body.to_vec(),
        }
    }

    #[test]
    fn single_bit_flip_is_detected() {
        let bytes = env(b"hello federation").encode().unwrap();
        for i in 0..bytes.len() {
            let mut t = bytes.clone();
            t[i] ^= 0x01;
            assert!(Envelope::decode(&t).is_err(), "flip at {i} undetected");
        }
    }

    #[test]
    fn digest_covers_header_and_body() {
        let bytes = env(b"x").encode().unwrap();
        let d = Envelope::attached_digest(&bytes).unwrap();
        assert_eq!(d, digest(&bytes[..bytes.len() - 32]));
    }

    #[test]
    fn truncation_and_garbage() {
        let bytes = env(b"abc").encode().unwrap();
        for n in 0..bytes.len() {
            assert!(Envelope::decode(&bytes[..n]).is_err());
        }
        assert!(Envelope::decode(b"BDMF\x01\xff").is_err());
        assert!(!Envelope::has_marker(b"plain"));
    }

    proptest! {
        #[test]
        fn round_trip(body in proptest::collection::vec(any::<u8>(), 0..256),
                      owner in "[a-z0-9]{0,12}",
                      bits in 0u8..8) {
            let e = Envelope { flags: EnvelopeFlags::from_bits(bits).unwrap(), owner, body };
            let bytes = e.encode().unwrap();
            prop_assert!(Envelope::has_marker(&bytes));
            prop_assert_eq!(Envelope::decode(&bytes).unwrap(), e);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
            let _ = Envelope::decode(&bytes);
        }
    }
}
