//! Shamir secret sharing over `Z_p` with Lagrange interpolation.
//!
//! The multi-party protocols built on top of it (distributed key generation,
//! proactive resharing, product degree reduction) live in [`protocol`].

use std::collections::BTreeSet;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::group::Scalar;

pub mod protocol;

pub use protocol::{
    distributed_keygen, proactive_reshare, run_keygen, run_product, share_mul_reduce, Committed, DealRound,
    LocalParty, Party, PartyError, PartyStatus, ProtocolError, RoundError, RoundHeader, RoundOutcome, SessionId,
    ShareHolder, ShareSlot,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SharingError {
    #[error("invalid sharing configuration: {0}")]
    BadConfig(String),
    #[error("duplicate server index {0}")]
    DuplicateIndex(u32),
    #[error("server index {0} is zero or coincides with the evaluation point")]
    InvalidIndex(u32),
    #[error("shares span more than one epoch")]
    EpochMismatch,
    #[error("shares belong to different keys")]
    KeyMismatch,
    #[error("need {need} shares, have {have}")]
    InsufficientShares { have: usize, need: usize },
}

/// Opaque key identifier. A rotated key gets a fresh id; resharing keeps it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub String);

impl KeyId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `t`-out-of-`n` sharing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingConfig {
    pub n: u32,
    pub t: u32,
}

impl SharingConfig {
    pub fn new(n: u32, t: u32) -> Result<Self, SharingError> {
        let cfg = Self { n, t };
        if t == 0 || t > n {
            return Err(SharingError::BadConfig(format!("need 0 < t <= n, got n={n} t={t}")));
        }
        Ok(cfg)
    }

    /// Checks the parameters against the field: indices `1..=n` must be
    /// distinct nonzero residues.
    pub fn validate_for<S: Scalar>(&self) -> Result<(), SharingError> {
        if self.t == 0 || self.t > self.n {
            return Err(SharingError::BadConfig(format!(
                "need 0 < t <= n, got n={} t={}",
                self.n, self.t
            )));
        }
        if let Some(p) = S::SMALL_ORDER {
            if u64::from(self.n) >= p {
                return Err(SharingError::BadConfig(format!("n={} must be below p={p}", self.n)));
            }
        }
        Ok(())
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> {
        1..=self.n
    }
}

/// One server's share `k_i = f(i)` of a key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyShare<S> {
    pub server_index: u32,
    pub value: S,
    pub epoch: u64,
    pub key_id: KeyId,
}

/// `f(X) = c_0 + c_1 X + … + c_d X^d`.
#[derive(Clone, Debug)]
pub struct Polynomial<S> {
    coeffs: Vec<S>,
}

impl<S: Scalar> Polynomial<S> {
    pub fn random_with_constant<R: RngCore + ?Sized>(constant: S, degree: usize, rng: &mut R) -> Self {
        let mut coeffs = Vec::with_capacity(degree + 1);
        coeffs.push(constant);
        coeffs.extend((0..degree).map(|_| S::random(rng)));
        Self { coeffs }
    }

    pub fn from_coefficients(coeffs: Vec<S>) -> Self {
        assert!(!coeffs.is_empty(), "polynomial needs a constant term");
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: u32) -> S {
        let x = S::from_u64(u64::from(x));
        self.coeffs.iter().rev().fold(S::zero(), |acc, c| acc * x + *c)
    }
}

/// Raw `(index, f(index))` pairs for indices `1..=n`.
pub fn share_values<S: Scalar, R: RngCore + ?Sized>(
    secret: S,
    cfg: &SharingConfig,
    rng: &mut R,
) -> Result<Vec<(u32, S)>, SharingError> {
    cfg.validate_for::<S>()?;
    let poly = Polynomial::random_with_constant(secret, (cfg.t - 1) as usize, rng);
    Ok(cfg.indices().map(|i| (i, poly.eval(i))).collect())
}

pub fn share<S: Scalar, R: RngCore + ?Sized>(
    secret: S,
    cfg: &SharingConfig,
    key_id: &KeyId,
    epoch: u64,
    rng: &mut R,
) -> Result<Vec<KeyShare<S>>, SharingError> {
    Ok(share_values(secret, cfg, rng)?
        .into_iter()
        .map(|(server_index, value)| KeyShare {
            server_index,
            value,
            epoch,
            key_id: key_id.clone(),
        })
        .collect())
}

/// `λ_i^{L,h} = Π_{j∈L, j≠i} (h − j) / (i − j)`, in the order of `indices`.
pub fn lagrange_coefficients<S: Scalar>(indices: &[u32], at: u32) -> Result<Vec<S>, SharingError> {
    let mut seen = BTreeSet::new();
    for &i in indices {
        if i == 0 || i == at {
            return Err(SharingError::InvalidIndex(i));
        }
        if !seen.insert(i) {
            return Err(SharingError::DuplicateIndex(i));
        }
    }
    let h = S::from_u64(u64::from(at));
    indices
        .iter()
        .map(|&i| {
            let xi = S::from_u64(u64::from(i));
            let (num, den) = indices.iter().filter(|&&j| j != i).fold(
                (S::one(), S::one()),
                |(num, den), &j| {
                    let xj = S::from_u64(u64::from(j));
                    (num * (h - xj), den * (xi - xj))
                },
            );
            den.invert()
                .map(|inv| num * inv)
                .map_err(|_| SharingError::DuplicateIndex(i))
        })
        .collect()
}

/// Evaluates the interpolating polynomial of `points` at `at`. No epoch or
/// key checks; see [`reconstruct`] for the guarded entry point.
pub fn interpolate<S: Scalar>(points: &[(u32, S)], at: u32) -> Result<S, SharingError> {
    let indices: Vec<u32> = points.iter().map(|(i, _)| *i).collect();
    let lambdas = lagrange_coefficients::<S>(&indices, at)?;
    Ok(points
        .iter()
        .zip(lambdas)
        .fold(S::zero(), |acc, ((_, v), l)| acc + *v * l))
}

/// Recovers `f(0)` from the first `t` of `shares`.
pub fn reconstruct<S: Scalar>(shares: &[KeyShare<S>], cfg: &SharingConfig) -> Result<S, SharingError> {
    let need = cfg.t as usize;
    if shares.len() < need {
        return Err(SharingError::InsufficientShares {
            have: shares.len(),
            need,
        });
    }
    let first = &shares[0];
    if shares.iter().any(|s| s.key_id != first.key_id) {
        return Err(SharingError::KeyMismatch);
    }
    if shares.iter().any(|s| s.epoch != first.epoch) {
        return Err(SharingError::EpochMismatch);
    }
    let points: Vec<(u32, S)> = shares[..need]
        .iter()
        .map(|s| (s.server_index, s.value))
        .collect();
    interpolate(&points, 0)
}
