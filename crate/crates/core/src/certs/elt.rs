//! One-time exemption list tokens.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ed25519_dalek::VerifyingKey;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{signature_from_b64, validate_chain, verify, Certificate, ChainError, Role, Signer};
use crate::wire::b64_encode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "kebab-case")]
pub enum Binding {
    /// A single researcher certificate.
    Researcher { fingerprint: String },
    /// Any researcher certified by this principal investigator, or the PI.
    Lab { pi_fingerprint: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contacts {
    pub principal_investigator: String,
    pub biosafety_officer: String,
    pub legal: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EltRequest {
    #[serde(default)]
    pub accessions: Vec<String>,
    /// Hex SHA-256 digests of whole sequences (uppercase, U read as T).
    #[serde(default)]
    pub sequence_digests: Vec<String>,
    pub binding: Binding,
    pub shipping_address: String,
    pub contacts: Contacts,
    pub not_before: u64,
    pub not_after: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EltBody {
    pub accessions: Vec<String>,
    pub sequence_digests: Vec<String>,
    pub binding: Binding,
    pub shipping_address: String,
    pub contacts: Contacts,
    pub not_before: u64,
    pub not_after: u64,
    /// 16 random bytes, hex.
    pub nonce: String,
    /// Root-first chain ending at the approving officer.
    pub officer_chain: Vec<Certificate>,
}

impl EltBody {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemptionListToken {
    pub body: EltBody,
    pub signature: String,
}

/// A token plus proof that the presenter holds the key of a certificate
/// satisfying the binding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EltPresentation {
    pub token: ExemptionListToken,
    pub presenter_chain: Vec<Certificate>,
    pub signature: String,
}

impl EltPresentation {
    pub fn new(token: ExemptionListToken, presenter_chain: Vec<Certificate>, key: &dyn Signer) -> Self {
        let sig = key.sign(&presentation_message(&token));
        Self {
            token,
            presenter_chain,
            signature: b64_encode(&sig.to_bytes()),
        }
    }
}

pub fn presentation_message(token: &ExemptionListToken) -> Vec<u8> {
    let mut m = b"elt-presentation:".to_vec();
    m.extend_from_slice(token.body.nonce.as_bytes());
    m.push(b':');
    m.extend_from_slice(token.signature.as_bytes());
    m
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EltGrant {
    pub accessions: BTreeSet<String>,
    pub sequence_digests: BTreeSet<String>,
    pub contacts: Contacts,
    pub nonce: String,
    pub presenter: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EltError {
    #[error("exemption list is empty")]
    EmptyExemptions,
    #[error("officer chain invalid: {0}")]
    InvalidOfficerChain(ChainError),
    #[error("approving certificate role {0:?} may not approve exemptions")]
    OfficerRole(Role),
    #[error("token signature does not verify")]
    BrokenSignature,
    #[error("token is outside its validity window")]
    Expired,
    #[error("presenter chain invalid: {0}")]
    InvalidPresenterChain(ChainError),
    #[error("presenter does not satisfy the token binding")]
    BindingMismatch,
    #[error("token nonce already consumed")]
    EltReplayed,
    #[error("nonce store: {0}")]
    Store(String),
}

pub fn create_and_approve_elt<R: RngCore + CryptoRng>(
    req: &EltRequest,
    officer_chain: &[Certificate],
    officer_key: &dyn Signer,
    trust_root: &VerifyingKey,
    now: u64,
    rng: &mut R,
) -> Result<ExemptionListToken, EltError> {
    if req.accessions.is_empty() && req.sequence_digests.is_empty() {
        return Err(EltError::EmptyExemptions);
    }
    validate_chain(officer_chain, trust_root, now).map_err(EltError::InvalidOfficerChain)?;
    let officer = officer_chain.last().expect("validated chain is nonempty");
    if !officer.role().may_approve_elt() {
        return Err(EltError::OfficerRole(officer.role()));
    }
    if officer.body.public_key() != Some(officer_key.public_key()) {
        return Err(EltError::BrokenSignature);
    }
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let dedup = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>();
    let body = EltBody {
        accessions: dedup(&req.accessions),
        sequence_digests: dedup(&req.sequence_digests.iter().map(|d| d.to_lowercase()).collect::<Vec<_>>()),
        binding: req.binding.clone(),
        shipping_address: req.shipping_address.clone(),
        contacts: req.contacts.clone(),
        not_before: req.not_before,
        not_after: req.not_after.min(officer.body.not_after),
        nonce: hex::encode(nonce),
        officer_chain: officer_chain.to_vec(),
    };
    let sig = officer_key.sign(&body.canonical_bytes());
    Ok(ExemptionListToken {
        body,
        signature: b64_encode(&sig.to_bytes()),
    })
}

fn binding_satisfied(binding: &Binding, presenter: &Certificate) -> bool {
    match binding {
        Binding::Researcher { fingerprint } => presenter.fingerprint() == *fingerprint,
        Binding::Lab { pi_fingerprint } => {
            presenter.fingerprint() == *pi_fingerprint
                || (presenter.role() == Role::Researcher && presenter.body.issuer == *pi_fingerprint)
        }
    }
}

/// Checks signature, validity, and binding, and consumes the nonce only if
/// all of those pass.
pub fn verify_elt(
    p: &EltPresentation,
    trust_root: &VerifyingKey,
    store: &dyn NonceStore,
    now: u64,
) -> Result<EltGrant, EltError> {
    let body = &p.token.body;
    validate_chain(&body.officer_chain, trust_root, now).map_err(EltError::InvalidOfficerChain)?;
    let officer = body.officer_chain.last().expect("validated chain is nonempty");
    if !officer.role().may_approve_elt() {
        return Err(EltError::OfficerRole(officer.role()));
    }
    let officer_key = officer.body.public_key().ok_or(EltError::BrokenSignature)?;
    let sig = signature_from_b64(&p.token.signature).ok_or(EltError::BrokenSignature)?;
    if !verify(&officer_key, &body.canonical_bytes(), &sig) {
        return Err(EltError::BrokenSignature);
    }
    if now < body.not_before || now > body.not_after {
        return Err(EltError::Expired);
    }
    validate_chain(&p.presenter_chain, trust_root, now).map_err(EltError::InvalidPresenterChain)?;
    let presenter = p.presenter_chain.last().expect("validated chain is nonempty");
    let pkey = presenter.body.public_key().ok_or(EltError::BindingMismatch)?;
    let psig = signature_from_b64(&p.signature).ok_or(EltError::BindingMismatch)?;
    if !verify(&pkey, &presentation_message(&p.token), &psig) || !binding_satisfied(&body.binding, presenter) {
        return Err(EltError::BindingMismatch);
    }
    if !store.consume(&body.nonce)? {
        return Err(EltError::EltReplayed);
    }
    Ok(EltGrant {
        accessions: body.accessions.iter().cloned().collect(),
        sequence_digests: body.sequence_digests.iter().cloned().collect(),
        contacts: body.contacts.clone(),
        nonce: body.nonce.clone(),
        presenter: presenter.fingerprint(),
    })
}

/// Consumed-nonce set with atomic check-and-insert.
pub trait NonceStore: Send + Sync {
    /// True if the nonce was fresh and is now consumed.
    fn consume(&self, nonce: &str) -> Result<bool, EltError>;
    fn contains(&self, nonce: &str) -> bool;
}

#[derive(Default)]
pub struct MemoryNonceStore(Mutex<HashSet<String>>);

impl NonceStore for MemoryNonceStore {
    fn consume(&self, nonce: &str) -> Result<bool, EltError> {
        Ok(self.0.lock().unwrap().insert(nonce.to_string()))
    }

    fn contains(&self, nonce: &str) -> bool {
        self.0.lock().unwrap().contains(nonce)
    }
}

/// Append-only log, one nonce per line, synced before a consume returns.
pub struct FileNonceStore {
    path: PathBuf,
    inner: Mutex<(HashSet<String>, File)>,
}

impl FileNonceStore {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut seen = HashSet::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                let line = line.trim();
                if !line.is_empty() {
                    seen.insert(line.to_string());
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new((seen, file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl NonceStore for FileNonceStore {
    fn consume(&self, nonce: &str) -> Result<bool, EltError> {
        let mut guard = self.inner.lock().unwrap();
        let (seen, file) = &mut *guard;
        if seen.contains(nonce) {
            return Ok(false);
        }
        writeln!(file, "{nonce}")
            .and_then(|_| file.sync_data())
            .map_err(|e| EltError::Store(e.to_string()))?;
        seen.insert(nonce.to_string());
        Ok(true)
    }

    fn contains(&self, nonce: &str) -> bool {
        self.inner.lock().unwrap().0.contains(nonce)
    }
}
