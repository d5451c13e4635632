//! Prime-order group abstraction used by every protocol in the crate.
//!
//! Protocol code is generic over [`Group`]. Production deployments use
//! [`Ristretto`]; the [`residue`] groups are small Schnorr subgroups of
//! `Z_q^*` whose discrete logs can be brute-forced, which lets tests check
//! protocol outputs against directly computed oracles.

use std::fmt::Debug;
use std::hash::Hash;
use std::ops::{Add, Mul, Neg, Sub};

use rand::RngCore;

pub mod residue;
mod ristretto;

pub use residue::{ModScalar, Residue, TestGroup10007, TestGroup11, TestGroup61, TestGroup7};
pub use ristretto::{Ristretto, RistrettoScalar};

/// Length of every canonical group element and scalar encoding.
pub const ENCODED_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroupError {
    #[error("attempted to invert zero")]
    InversionOfZero,
    #[error("hash-to-group input is empty")]
    EmptyHashInput,
    #[error("non-canonical group element encoding")]
    NonCanonicalElement,
    #[error("non-canonical scalar encoding")]
    NonCanonicalScalar,
    #[error("expected {ENCODED_LEN} bytes, got {0}")]
    BadLength(usize),
}

/// An element of `Z_p`, where `p` is the order of the associated group.
pub trait Scalar:
    Copy
    + Eq
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    /// The group order, when it fits in a `u64`.
    const SMALL_ORDER: Option<u64>;

    fn zero() -> Self;
    fn one() -> Self;
    /// Reduces `v` modulo the group order.
    fn from_u64(v: u64) -> Self;
    /// Uniform sample from `Z_p`.
    fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self;
    fn is_zero(&self) -> bool;
    fn invert(&self) -> Result<Self, GroupError>;
    /// 32-byte little-endian residue.
    fn to_bytes(&self) -> [u8; ENCODED_LEN];
    /// Rejects encodings of values `>= p`.
    fn from_bytes(bytes: &[u8; ENCODED_LEN]) -> Result<Self, GroupError>;

    fn random_nonzero<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let s = Self::random(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }
}

/// A finite abelian group of prime order, written multiplicatively.
pub trait Group: Copy + Eq + Hash + Debug + Send + Sync + 'static {
    type Scalar: Scalar;

    /// Stable name, used in configuration files and scenario descriptions.
    const NAME: &'static str;

    fn identity() -> Self;
    fn generator() -> Self;
    /// The group law.
    fn op(&self, other: &Self) -> Self;
    fn exp(&self, s: &Self::Scalar) -> Self;
    fn encode(&self) -> [u8; ENCODED_LEN];
    fn decode(bytes: &[u8; ENCODED_LEN]) -> Result<Self, GroupError>;
    /// Deterministic map from arbitrary bytes onto the group. Callers should
    /// go through [`hash_to_group`], which enforces a nonempty input.
    fn map_to_group(input: &[u8]) -> Self;

    fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

pub fn scalar_invert<S: Scalar>(s: &S) -> Result<S, GroupError> {
    s.invert()
}

pub fn group_exp<G: Group>(g: &G, s: &G::Scalar) -> G {
    g.exp(s)
}

pub fn hash_to_group<G: Group>(input: &[u8]) -> Result<G, GroupError> {
    if input.is_empty() {
        return Err(GroupError::EmptyHashInput);
    }
    Ok(G::map_to_group(input))
}

/// Decodes a slice that must be exactly [`ENCODED_LEN`] bytes long.
pub fn decode_slice<G: Group>(bytes: &[u8]) -> Result<G, GroupError> {
    let arr: &[u8; ENCODED_LEN] = bytes
        .try_into()
        .map_err(|_| GroupError::BadLength(bytes.len()))?;
    G::decode(arr)
}

pub fn scalar_from_slice<S: Scalar>(bytes: &[u8]) -> Result<S, GroupError> {
    let arr: &[u8; ENCODED_LEN] = bytes
        .try_into()
        .map_err(|_| GroupError::BadLength(bytes.len()))?;
    S::from_bytes(arr)
}

/// Inverts every scalar with a single field inversion (Montgomery's trick).
pub fn batch_invert<S: Scalar>(values: &[S]) -> Result<Vec<S>, GroupError> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let mut prefix = Vec::with_capacity(values.len());
    let mut acc = S::one();
    for v in values {
        if v.is_zero() {
            return Err(GroupError::InversionOfZero);
        }
        prefix.push(acc);
        acc = acc * *v;
    }
    let mut inv = acc.invert()?;
    let mut out = vec![S::zero(); values.len()];
    for i in (0..values.len()).rev() {
        out[i] = inv * prefix[i];
        inv = inv * values[i];
    }
    Ok(out)
}

/// Exponentiation by repeated application of the group law. Test oracle only;
/// linear in `n`.
pub fn iterated_power<G: Group>(g: &G, n: u64) -> G {
    let mut acc = G::identity();
    for _ in 0..n {
        acc = acc.op(g);
    }
    acc
}
