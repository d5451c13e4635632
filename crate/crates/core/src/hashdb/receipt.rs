//! Signed attestations that a number of windows were screened against a
//! database version.

use ed25519_dalek::{Signature, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Decision;
use crate::certs::{verify, Signer};
use crate::wire::{b64_decode, b64_encode};

const MAGIC: &[u8; 5] = b"RCPT1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub count: u64,
    pub db_version: u64,
    pub timestamp_ms: u64,
    /// Fingerprint of the requester's certificate.
    pub requester: String,
    pub decision: Decision,
    pub signature: [u8; 64],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReceiptError {
    #[error("truncated or malformed receipt")]
    Malformed,
    #[error("receipt signature does not verify")]
    BadSignature,
}

impl Receipt {
    pub fn signed_bytes(&self) -> Vec<u8> {
        body_bytes(self.count, self.db_version, self.timestamp_ms, &self.requester, self.decision)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = self.signed_bytes();
        b.extend_from_slice(&self.signature);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ReceiptError> {
        let rest = b.strip_prefix(MAGIC.as_slice()).ok_or(ReceiptError::Malformed)?;
        if rest.len() < 8 * 3 + 2 {
            return Err(ReceiptError::Malformed);
        }
        let u64_at = |i: usize| u64::from_be_bytes(rest[i..i + 8].try_into().expect("8 bytes"));
        let (count, db_version, timestamp_ms) = (u64_at(0), u64_at(8), u64_at(16));
        let len = u16::from_be_bytes([rest[24], rest[25]]) as usize;
        let rest = &rest[26..];
        if rest.len() != len + 1 + 64 {
            return Err(ReceiptError::Malformed);
        }
        let requester = std::str::from_utf8(&rest[..len]).map_err(|_| ReceiptError::Malformed)?.to_string();
        let decision = Decision::from_code(rest[len]).ok_or(ReceiptError::Malformed)?;
        let signature: [u8; 64] = rest[len + 1..].try_into().expect("64 bytes");
        Ok(Self {
            count,
            db_version,
            timestamp_ms,
            requester,
            decision,
            signature,
        })
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        verify(key, &self.signed_bytes(), &Signature::from_bytes(&self.signature))
    }
}

fn body_bytes(count: u64, version: u64, ts: u64, requester: &str, decision: Decision) -> Vec<u8> {
    let mut b = Vec::with_capacity(MAGIC.len() + 27 + requester.len());
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&count.to_be_bytes());
    b.extend_from_slice(&version.to_be_bytes());
    b.extend_from_slice(&ts.to_be_bytes());
    b.extend_from_slice(&(requester.len() as u16).to_be_bytes());
    b.extend_from_slice(requester.as_bytes());
    b.push(decision.code());
    b
}

pub fn issue_receipt(count: u64, db_version: u64, decision: Decision, requester: &str, timestamp_ms: u64, key: &dyn Signer) -> Receipt {
    let sig = key.sign(&body_bytes(count, db_version, timestamp_ms, requester, decision));
    Receipt {
        count,
        db_version,
        timestamp_ms,
        requester: requester.into(),
        decision,
        signature: sig.to_bytes(),
    }
}

/// Parses and checks a serialized receipt.
pub fn verify_receipt_bytes(bytes: &[u8], key: &VerifyingKey) -> Result<Receipt, ReceiptError> {
    let r = Receipt::from_bytes(bytes)?;
    if r.verify(key) {
        Ok(r)
    } else {
        Err(ReceiptError::BadSignature)
    }
}

impl Serialize for Receipt {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&b64_encode(&self.to_bytes()))
    }
}

impl<'de> Deserialize<'de> for Receipt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = b64_decode(&s).map_err(serde::de::Error::custom)?;
        Receipt::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certs::SoftwareKey;

    #[test]
    fn every_byte_flip_is_detected() {
        let key = SoftwareKey::from_seed([3; 32]);
        let r = issue_receipt(4242, 7, Decision::Alert, "ab12cd", 1_700_000_000_123, &key);
        let bytes = r.to_bytes();
        assert_eq!(verify_receipt_bytes(&bytes, &key.public_key()), Ok(r.clone()));
        for i in 0..bytes.len() {
            for bit in [0x01u8, 0x80] {
                let mut b = bytes.clone();
                b[i] ^= bit;
                assert!(verify_receipt_bytes(&b, &key.public_key()).is_err(), "byte {i} bit {bit:#x}");
            }
        }
        assert!(verify_receipt_bytes(&bytes[..bytes.len() - 1], &key.public_key()).is_err());
        let other = SoftwareKey::from_seed([4; 32]);
        assert_eq!(verify_receipt_bytes(&bytes, &other.public_key()), Err(ReceiptError::BadSignature));
    }

    #[test]
    fn identical_requests_differ_only_in_time_and_signature() {
        let key = SoftwareKey::from_seed([5; 32]);
        let a = issue_receipt(10, 1, Decision::Accepted, "fp", 1000, &key);
        let b = issue_receipt(10, 1, Decision::Accepted, "fp", 2000, &key);
        assert_eq!((a.count, a.db_version, &a.requester, a.decision), (b.count, b.db_version, &b.requester, b.decision));
        assert_ne!(a.signature, b.signature);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Receipt>(&json).unwrap(), a);
    }
}
