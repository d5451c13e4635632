//! Certificate chains rooted at a single trust anchor.
//!
//! Certificates are canonical JSON bodies with a detached base64 Ed25519
//! signature. A chain is ordered root first; each certificate names its
//! issuer by the issuer's public-key fingerprint.

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};

mod dev;
mod elt;
mod keys;

pub use dev::{DevPki, Identity};

pub use elt::{
    create_and_approve_elt, presentation_message, verify_elt, Binding, Contacts, EltBody, EltError, EltGrant,
    EltPresentation, EltRequest, ExemptionListToken, FileNonceStore, MemoryNonceStore, NonceStore,
};
pub use keys::{fingerprint, public_key_from_b64, signature_from_b64, verify, Signer, SoftwareKey};

use crate::wire::b64_encode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Root,
    NationalAuthority,
    BiosafetyOfficer,
    PrincipalInvestigator,
    Researcher,
    Manufacturer,
    Provider,
    Machine,
    /// Keyservers, the database, and the key-lifecycle coordinator.
    Infrastructure,
}

impl Role {
    pub fn may_issue(self, subject: Role) -> bool {
        use Role::*;
        matches!(
            (self, subject),
            (Root, NationalAuthority | Manufacturer | Provider | Infrastructure)
                | (NationalAuthority, BiosafetyOfficer)
                | (BiosafetyOfficer, PrincipalInvestigator)
                | (PrincipalInvestigator, Researcher)
                | (Manufacturer | Provider, Machine)
        )
    }

    /// Roles that may approve exemption tokens.
    pub fn may_approve_elt(self) -> bool {
        matches!(self, Role::Root | Role::NationalAuthority | Role::BiosafetyOfficer)
    }

    /// Roles that may submit screening work.
    pub fn may_screen(self) -> bool {
        matches!(self, Role::Provider | Role::Machine | Role::Infrastructure)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertBody {
    pub subject: String,
    pub role: Role,
    /// Base64 Ed25519 public key.
    pub public_key: String,
    /// Fingerprint of the issuer's public key; a root names itself.
    pub issuer: String,
    /// Unix seconds.
    pub not_before: u64,
    pub not_after: u64,
}

impl CertBody {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    pub fn public_key(&self) -> Option<VerifyingKey> {
        public_key_from_b64(&self.public_key)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub body: CertBody,
    pub signature: String,
}

impl Certificate {
    /// Fingerprint of the subject's key as written in the body. For a
    /// malformed key this is the fingerprint of the raw text.
    pub fn fingerprint(&self) -> String {
        match self.body.public_key() {
            Some(k) => fingerprint(&k),
            None => hex::encode(<sha2::Sha256 as sha2::Digest>::digest(self.body.public_key.as_bytes())),
        }
    }

    pub fn role(&self) -> Role {
        self.body.role
    }

    fn signed_by(&self, key: &VerifyingKey) -> bool {
        match signature_from_b64(&self.signature) {
            Some(sig) => verify(key, &self.body.canonical_bytes(), &sig),
            None => false,
        }
    }

    fn valid_at(&self, now: u64) -> bool {
        self.body.not_before <= now && now <= self.body.not_after
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CertRequest {
    pub subject: String,
    pub role: Role,
    pub public_key: VerifyingKey,
    pub not_before: u64,
    pub not_after: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertError {
    #[error("{issuer:?} may not issue {subject:?} certificates")]
    RoleViolation { issuer: Role, subject: Role },
    #[error("issuer certificate is not valid at time {0}")]
    ExpiredIssuer(u64),
    #[error("issuer key does not match issuer certificate")]
    KeyMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("empty certificate chain")]
    Empty,
    #[error("chain is not anchored at the trusted root")]
    UnknownRoot,
    #[error("link {link}: signature does not verify under its issuer")]
    BrokenSignature { link: usize },
    #[error("link {link}: {issuer:?} may not issue {subject:?}")]
    RoleViolation { link: usize, issuer: Role, subject: Role },
    #[error("link {link}: outside its validity window")]
    Expired { link: usize },
}

impl ChainError {
    pub fn link(&self) -> Option<usize> {
        match self {
            ChainError::BrokenSignature { link }
            | ChainError::RoleViolation { link, .. }
            | ChainError::Expired { link } => Some(*link),
            _ => None,
        }
    }
}

fn sign_body(body: CertBody, key: &dyn Signer) -> Certificate {
    let sig = key.sign(&body.canonical_bytes());
    Certificate {
        body,
        signature: b64_encode(&sig.to_bytes()),
    }
}

pub fn self_signed_root(subject: &str, key: &dyn Signer, not_before: u64, not_after: u64) -> Certificate {
    let pk = key.public_key();
    sign_body(
        CertBody {
            subject: subject.into(),
            role: Role::Root,
            public_key: b64_encode(pk.as_bytes()),
            issuer: fingerprint(&pk),
            not_before,
            not_after,
        },
        key,
    )
}

/// Signs `req` under `issuer`. The new certificate's validity is clipped to
/// the issuer's.
pub fn issue_certificate(
    issuer: &Certificate,
    issuer_key: &dyn Signer,
    req: &CertRequest,
    now: u64,
) -> Result<Certificate, CertError> {
    if issuer.body.public_key() != Some(issuer_key.public_key()) {
        return Err(CertError::KeyMismatch);
    }
    if !issuer.role().may_issue(req.role) {
        return Err(CertError::RoleViolation {
            issuer: issuer.role(),
            subject: req.role,
        });
    }
    if !issuer.valid_at(now) {
        return Err(CertError::ExpiredIssuer(now));
    }
    Ok(sign_body(
        CertBody {
            subject: req.subject.clone(),
            role: req.role,
            public_key: b64_encode(req.public_key.as_bytes()),
            issuer: issuer.fingerprint(),
            not_before: req.not_before.max(issuer.body.not_before),
            not_after: req.not_after.min(issuer.body.not_after),
        },
        issuer_key,
    ))
}

/// Checks a root-first chain top-down, so a tampered certificate is reported
/// at its own position. Per link: issuer linkage and signature, then role
/// order, then validity.
pub fn validate_chain(chain: &[Certificate], trust_root: &VerifyingKey, now: u64) -> Result<(), ChainError> {
    let root = chain.first().ok_or(ChainError::Empty)?;
    if root.body.public_key() != Some(*trust_root) || root.role() != Role::Root {
        return Err(ChainError::UnknownRoot);
    }
    if root.body.issuer != fingerprint(trust_root) || !root.signed_by(trust_root) {
        return Err(ChainError::BrokenSignature { link: 0 });
    }
    if !root.valid_at(now) {
        return Err(ChainError::Expired { link: 0 });
    }
    for link in 1..chain.len() {
        let issuer = &chain[link - 1];
        let cert = &chain[link];
        let issuer_key = issuer.body.public_key().ok_or(ChainError::BrokenSignature { link: link - 1 })?;
        if cert.body.issuer != fingerprint(&issuer_key) || !cert.signed_by(&issuer_key) {
            return Err(ChainError::BrokenSignature { link });
        }
        if cert.body.public_key().is_none() {
            return Err(ChainError::BrokenSignature { link });
        }
        if !issuer.role().may_issue(cert.role()) {
            return Err(ChainError::RoleViolation {
                link,
                issuer: issuer.role(),
                subject: cert.role(),
            });
        }
        if !cert.valid_at(now) {
            return Err(ChainError::Expired { link });
        }
    }
    Ok(())
}

/// The leaf of a validated chain.
pub fn leaf(chain: &[Certificate]) -> Option<&Certificate> {
    chain.last()
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    pub const T0: u64 = 1_700_000_000;
    pub const YEAR: u64 = 365 * 86_400;

    pub struct Pki {
        pub root_key: SoftwareKey,
        pub root: Certificate,
        pub rng: ChaCha20Rng,
    }

    impl Pki {
        pub fn new(seed: u64) -> Self {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let root_key = SoftwareKey::generate(&mut rng);
            let root = self_signed_root("root", &root_key, T0, T0 + 10 * YEAR);
            Self { root_key, root, rng }
        }

        pub fn trust(&self) -> VerifyingKey {
            self.root_key.public_key()
        }

        pub fn issue(&mut self, issuer: &Certificate, key: &SoftwareKey, subject: &str, role: Role) -> (Certificate, SoftwareKey) {
            let k = SoftwareKey::generate(&mut self.rng);
            let req = CertRequest {
                subject: subject.into(),
                role,
                public_key: k.public_key(),
                not_before: T0,
                not_after: T0 + 5 * YEAR,
            };
            (issue_certificate(issuer, key, &req, T0 + 1).unwrap(), k)
        }

        /// root → authority → officer → PI → researcher, with keys.
        pub fn research_chain(&mut self) -> (Vec<Certificate>, Vec<SoftwareKey>) {
            let root = self.root.clone();
            let rk = self.root_key.clone();
            let (na, nak) = self.issue(&root, &rk, "authority", Role::NationalAuthority);
            let (bo, bok) = self.issue(&na, &nak, "officer", Role::BiosafetyOfficer);
            let (pi, pik) = self.issue(&bo, &bok, "pi", Role::PrincipalInvestigator);
            let (r, rk2) = self.issue(&pi, &pik, "researcher", Role::Researcher);
            (vec![root, na, bo, pi, r], vec![self.root_key.clone(), nak, bok, pik, rk2])
        }
    }
}
