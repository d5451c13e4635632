//! Threshold oblivious PRF `F_k(x) = M(x)^k`.
//!
//! The client blinds `M(x)` with a fresh `β`, each server `i ∈ L` raises the
//! blinded point to `λ_i^{L,0}·k_i`, and the client multiplies the `t`
//! responses and removes `β`.

use serde::{Deserialize, Serialize};

use crate::group::{batch_invert, hash_to_group, Group, GroupError, Scalar, ENCODED_LEN};
use crate::sharing::{lagrange_coefficients, SharingError};
use crate::windows::WindowKind;

pub mod client;

pub use client::{
    DoprfClient, EvalOutput, EvalRequest, HandleError, KeyTarget, KeyserverHandle, ServerStatus,
    SubsetPolicy, DEFAULT_BATCH_SIZE,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DoprfError {
    #[error("blinding factor is zero")]
    ZeroBlind,
    #[error("server {index} is not in the evaluation set")]
    NotInEvaluationSet { index: u32 },
    #[error("expected {need} evaluated shares, got {have}")]
    ShareCountMismatch { have: usize, need: usize },
    #[error("blinded point is the identity or malformed")]
    MalformedPoint,
    #[error("only {available} keyservers available, need {need}")]
    QuorumUnavailable { available: usize, need: usize },
    #[error("keyservers rate limited the request; retry after {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("keyservers disagree on the key epoch: {0:?}")]
    EpochMismatch(Vec<(u32, u64)>),
    #[error("batch of {size} exceeds the maximum of {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

/// `X = M(x)^β` together with the evaluation set `L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlindedPoint<G> {
    pub point: G,
    pub server_set: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvaluatedShare<G> {
    pub server_index: u32,
    pub point: G,
}

/// The 32-byte encoding of `M(x)^k`, labelled with the kind of window it
/// came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HashedWindow {
    #[serde(with = "crate::wire::b64_array")]
    pub bytes: [u8; ENCODED_LEN],
    pub kind: WindowKind,
}

impl HashedWindow {
    pub fn new<G: Group>(point: &G, kind: WindowKind) -> Self {
        Self {
            bytes: point.encode(),
            kind,
        }
    }

    pub fn point<G: Group>(&self) -> Result<G, GroupError> {
        G::decode(&self.bytes)
    }
}

pub fn blind<G: Group>(x: &[u8], beta: &G::Scalar) -> Result<G, DoprfError> {
    let m = hash_to_group::<G>(x)?;
    blind_element(&m, beta)
}

/// Blinds an input that is already a group element (table re-keying).
pub fn blind_element<G: Group>(m: &G, beta: &G::Scalar) -> Result<G, DoprfError> {
    if beta.is_zero() {
        return Err(DoprfError::ZeroBlind);
    }
    Ok(m.exp(beta))
}

/// Server side of one evaluation. The server computes its own Lagrange
/// coefficient from `L` rather than trusting one supplied by the client.
pub fn evaluate_share<G: Group>(
    x: &G,
    set: &[u32],
    index: u32,
    k_i: &G::Scalar,
) -> Result<EvaluatedShare<G>, DoprfError> {
    let exponent = share_exponent::<G::Scalar>(set, index, k_i)?;
    Ok(EvaluatedShare {
        server_index: index,
        point: x.exp(&exponent),
    })
}

/// `λ_i^{L,0}·k_i`, shared by every point of a batch.
pub fn share_exponent<S: Scalar>(set: &[u32], index: u32, k_i: &S) -> Result<S, DoprfError> {
    let pos = set
        .iter()
        .position(|j| *j == index)
        .ok_or(DoprfError::NotInEvaluationSet { index })?;
    let lambdas = lagrange_coefficients::<S>(set, 0)?;
    Ok(lambdas[pos] * *k_i)
}

/// Batched server evaluation; rejects identity points.
pub fn evaluate_batch<G: Group>(
    points: &[G],
    set: &[u32],
    index: u32,
    k_i: &G::Scalar,
) -> Result<Vec<G>, DoprfError> {
    let e = share_exponent::<G::Scalar>(set, index, k_i)?;
    points
        .iter()
        .map(|p| {
            if p.is_identity() {
                Err(DoprfError::MalformedPoint)
            } else {
                Ok(p.exp(&e))
            }
        })
        .collect()
}

pub fn unblind_combine<G: Group>(
    shares: &[EvaluatedShare<G>],
    beta: &G::Scalar,
    t: usize,
) -> Result<G, DoprfError> {
    if shares.len() != t {
        return Err(DoprfError::ShareCountMismatch {
            have: shares.len(),
            need: t,
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in shares {
        if !seen.insert(s.server_index) {
            return Err(DoprfError::Sharing(SharingError::DuplicateIndex(s.server_index)));
        }
    }
    let product = shares
        .iter()
        .fold(G::identity(), |acc, s| acc.op(&s.point));
    Ok(product.exp(&beta.invert()?))
}

/// Combines per-server response vectors for a batch of points blinded by
/// `betas`, using one field inversion for the whole batch.
pub fn unblind_combine_batch<G: Group>(
    responses: &[Vec<G>],
    betas: &[G::Scalar],
) -> Result<Vec<G>, DoprfError> {
    let inverses = batch_invert(betas)?;
    let mut out = Vec::with_capacity(betas.len());
    for (j, inv) in inverses.iter().enumerate() {
        let mut acc = G::identity();
        for r in responses {
            let y = r.get(j).ok_or(DoprfError::ShareCountMismatch {
                have: r.len(),
                need: betas.len(),
            })?;
            acc = acc.op(y);
        }
        out.push(acc.exp(inv));
    }
    Ok(out)
}

/// `M(x)^k` computed directly from the key. Used where the key is known:
/// tests and oracle checks.
pub fn direct_eval<G: Group>(x: &[u8], k: &G::Scalar) -> Result<G, DoprfError> {
    Ok(hash_to_group::<G>(x)?.exp(k))
}
