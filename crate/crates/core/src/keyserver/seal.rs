//! Hashed-ElGamal sealing of sub-shares between keyservers, so a relaying
//! coordinator never sees share material.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use crate::wire::{b64_decode, b64_encode};

#[derive(Clone)]
pub struct TransportKey(StaticSecret);

impl std::fmt::Debug for TransportKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TransportKey({})", hex::encode(self.public()))
    }
}

#[derive(Serialize, Deserialize)]
struct TransportKeyFile {
    transport_secret: String,
}

impl TransportKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Self(StaticSecret::from(b))
    }

    pub fn public(&self) -> [u8; 32] {
        PublicKey::from(&self.0).to_bytes()
    }

    pub(crate) fn secret_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TransportKeyFile {
            transport_secret: b64_encode(&self.0.to_bytes()),
        })
        .expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let f: TransportKeyFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let bytes = b64_decode(&f.transport_secret).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = bytes.as_slice().try_into().map_err(|_| "transport secret must be 32 bytes".to_string())?;
        Ok(Self(StaticSecret::from(arr)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("sealed payload failed to open")]
pub struct SealError;

fn derive_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let mut h = Sha256::new();
    h.update(b"dnascreen-seal-v1");
    h.update(shared);
    h.update(ephemeral);
    h.update(recipient);
    Key::from(<[u8; 32]>::from(h.finalize()))
}

/// Returns (ephemeral public key, ciphertext). Each message uses a fresh
/// ephemeral key, hence a fresh AEAD key, so a fixed nonce is safe.
pub fn seal<R: RngCore + CryptoRng>(recipient: &[u8; 32], aad: &[u8], plaintext: &[u8], rng: &mut R) -> ([u8; 32], Vec<u8>) {
    let eph = TransportKey::generate(rng);
    let eph_pub = eph.public();
    let shared = eph.0.diffie_hellman(&PublicKey::from(*recipient));
    let cipher = ChaCha20Poly1305::new(&derive_key(shared.as_bytes(), &eph_pub, recipient));
    let ct = cipher
        .encrypt(&Nonce::default(), Payload { msg: plaintext, aad })
        .expect("in-memory encryption");
    (eph_pub, ct)
}

pub fn open(key: &TransportKey, ephemeral: &[u8; 32], aad: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, SealError> {
    let shared = key.0.diffie_hellman(&PublicKey::from(*ephemeral));
    let cipher = ChaCha20Poly1305::new(&derive_key(shared.as_bytes(), ephemeral, &key.public()));
    cipher
        .decrypt(&Nonce::default(), Payload { msg: ciphertext, aad })
        .map_err(|_| SealError)
}

/// Symmetric encryption for data at rest, with a random nonce prefix.
pub(crate) fn encrypt_at_rest<R: RngCore + CryptoRng>(key: &[u8; 32], plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(&Key::from(*key));
    let mut out = nonce.to_vec();
    out.extend(cipher.encrypt(&Nonce::from(nonce), plaintext).expect("in-memory encryption"));
    out
}

pub(crate) fn decrypt_at_rest(key: &[u8; 32], data: &[u8]) -> Result<Vec<u8>, SealError> {
    if data.len() < 12 {
        return Err(SealError);
    }
    let (nonce, ct) = data.split_at(12);
    let nonce: [u8; 12] = nonce.try_into().expect("split at 12");
    ChaCha20Poly1305::new(&Key::from(*key))
        .decrypt(&Nonce::from(nonce), ct)
        .map_err(|_| SealError)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn seal_round_trip_and_binding() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let bob = TransportKey::generate(&mut rng);
        let eve = TransportKey::generate(&mut rng);
        let (eph, ct) = seal(&bob.public(), b"s1:1->2", b"secret share", &mut rng);
        assert_eq!(open(&bob, &eph, b"s1:1->2", &ct).unwrap(), b"secret share");
        assert_eq!(open(&bob, &eph, b"s1:1->3", &ct), Err(SealError));
        assert_eq!(open(&eve, &eph, b"s1:1->2", &ct), Err(SealError));
        let mut bad = ct.clone();
        bad[0] ^= 1;
        assert_eq!(open(&bob, &eph, b"s1:1->2", &bad), Err(SealError));
        let k2 = TransportKey::from_json(&bob.to_json()).unwrap();
        assert_eq!(k2.public(), bob.public());
    }

    #[test]
    fn at_rest_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let key = [7u8; 32];
        let blob = encrypt_at_rest(&key, b"state", &mut rng);
        assert_eq!(decrypt_at_rest(&key, &blob).unwrap(), b"state");
        assert!(decrypt_at_rest(&[8u8; 32], &blob).is_err());
        assert!(decrypt_at_rest(&key, &blob[..5]).is_err());
    }
}
