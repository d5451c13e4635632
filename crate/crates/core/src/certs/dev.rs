//! Seeded certificate hierarchies for simulations and local deployments.

use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{issue_certificate, self_signed_root, CertRequest, Certificate, Role, Signer, SoftwareKey};
use crate::transport::Credentials;

#[derive(Clone, Debug)]
pub struct Identity {
    /// Root-first.
    pub chain: Vec<Certificate>,
    pub key: SoftwareKey,
}

impl Identity {
    pub fn leaf(&self) -> &Certificate {
        self.chain.last().expect("nonempty chain")
    }

    pub fn credentials(&self) -> Credentials {
        Credentials {
            chain: self.chain.clone(),
            key: Arc::new(self.key.clone()),
        }
    }
}

pub struct DevPki {
    root: Identity,
    rng: ChaCha20Rng,
    not_before: u64,
    not_after: u64,
}

impl DevPki {
    pub fn new(seed: u64, not_before: u64, not_after: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key = SoftwareKey::generate(&mut rng);
        let root = self_signed_root("root", &key, not_before, not_after);
        Self {
            root: Identity { chain: vec![root], key },
            rng,
            not_before,
            not_after,
        }
    }

    pub fn root(&self) -> &Identity {
        &self.root
    }

    pub fn trust(&self) -> VerifyingKey {
        self.root.key.public_key()
    }

    pub fn issue_under(&mut self, issuer: &Identity, subject: &str, role: Role) -> Identity {
        let key = SoftwareKey::generate(&mut self.rng);
        let req = CertRequest {
            subject: subject.into(),
            role,
            public_key: key.public_key(),
            not_before: self.not_before,
            not_after: self.not_after,
        };
        let cert = issue_certificate(issuer.leaf(), &issuer.key, &req, self.not_before)
            .expect("dev hierarchy follows the role order");
        let mut chain = issuer.chain.clone();
        chain.push(cert);
        Identity { chain, key }
    }

    /// An identity of `role`, with any intermediate certificates the role
    /// order requires created on the way.
    pub fn identity(&mut self, subject: &str, role: Role) -> Identity {
        let root = self.root.clone();
        match role {
            Role::Root => root,
            Role::NationalAuthority | Role::Manufacturer | Role::Provider | Role::Infrastructure => {
                self.issue_under(&root, subject, role)
            }
            Role::Machine => {
                let m = self.issue_under(&root, &format!("{subject}-manufacturer"), Role::Manufacturer);
                self.issue_under(&m, subject, role)
            }
            Role::BiosafetyOfficer | Role::PrincipalInvestigator | Role::Researcher => {
                let na = self.issue_under(&root, &format!("{subject}-authority"), Role::NationalAuthority);
                let bo = self.issue_under(&na, &format!("{subject}-officer"), Role::BiosafetyOfficer);
                if role == Role::BiosafetyOfficer {
                    return bo;
                }
                let pi = self.issue_under(&bo, &format!("{subject}-pi"), Role::PrincipalInvestigator);
                if role == Role::PrincipalInvestigator {
                    return pi;
                }
                self.issue_under(&pi, subject, role)
            }
        }
    }
}
