use std::path::Path;

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wire::{b64_decode, b64_encode};

/// Anything that can produce Ed25519 signatures. Software keys are the only
/// implementation here; a hardware token would implement the same trait.
pub trait Signer: Send + Sync {
    fn public_key(&self) -> VerifyingKey;
    fn sign(&self, msg: &[u8]) -> Signature;
}

#[derive(Clone)]
pub struct SoftwareKey(SigningKey);

impl std::fmt::Debug for SoftwareKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SoftwareKey({})", fingerprint(&self.0.verifying_key()))
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    secret: String,
}

impl SoftwareKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self(SigningKey::from_bytes(&seed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&KeyFile {
            secret: b64_encode(self.0.as_bytes()),
        })
        .expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let kf: KeyFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let bytes = b64_decode(&kf.secret).map_err(|e| e.to_string())?;
        let seed: [u8; 32] = bytes.as_slice().try_into().map_err(|_| "secret must be 32 bytes".to_string())?;
        Ok(Self::from_seed(seed))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }
}

impl Signer for SoftwareKey {
    fn public_key(&self) -> VerifyingKey {
        self.0.verifying_key()
    }

    fn sign(&self, msg: &[u8]) -> Signature {
        self.0.sign(msg)
    }
}

/// Hex SHA-256 of the raw public key.
pub fn fingerprint(key: &VerifyingKey) -> String {
    hex::encode(Sha256::digest(key.as_bytes()))
}

pub fn verify(key: &VerifyingKey, msg: &[u8], sig: &Signature) -> bool {
    key.verify_strict(msg, sig).is_ok() && key.verify(msg, sig).is_ok()
}

pub fn signature_from_b64(s: &str) -> Option<Signature> {
    let bytes = b64_decode(s).ok()?;
    let arr: [u8; 64] = bytes.as_slice().try_into().ok()?;
    Some(Signature::from_bytes(&arr))
}

pub fn public_key_from_b64(s: &str) -> Option<VerifyingKey> {
    let bytes = b64_decode(s).ok()?;
    let arr: [u8; 32] = bytes.as_slice().try_into().ok()?;
    VerifyingKey::from_bytes(&arr).ok()
}
