use std::hash::{Hash, Hasher};
use std::ops::{Add, Mul, Neg, Sub};

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use rand::RngCore;
use sha2::Sha512;

use super::{Group, GroupError, Scalar, ENCODED_LEN};

const HASH_DST: &[u8] = b"dnascreen-v1-ristretto255-map:";

/// The Ristretto255 prime-order group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ristretto(pub RistrettoPoint);

impl Hash for Ristretto {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.compress().as_bytes().hash(state);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RistrettoScalar(pub DalekScalar);

impl Add for RistrettoScalar {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Sub for RistrettoScalar {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Mul for RistrettoScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl Neg for RistrettoScalar {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl Scalar for RistrettoScalar {
    const SMALL_ORDER: Option<u64> = None;

    fn zero() -> Self {
        Self(DalekScalar::ZERO)
    }

    fn one() -> Self {
        Self(DalekScalar::ONE)
    }

    fn from_u64(v: u64) -> Self {
        Self(DalekScalar::from(v))
    }

    fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        Self(DalekScalar::from_bytes_mod_order_wide(&wide))
    }

    fn is_zero(&self) -> bool {
        self.0 == DalekScalar::ZERO
    }

    fn invert(&self) -> Result<Self, GroupError> {
        if self.is_zero() {
            return Err(GroupError::InversionOfZero);
        }
        Ok(Self(self.0.invert()))
    }

    fn to_bytes(&self) -> [u8; ENCODED_LEN] {
        self.0.to_bytes()
    }

    fn from_bytes(bytes: &[u8; ENCODED_LEN]) -> Result<Self, GroupError> {
        Option::from(DalekScalar::from_canonical_bytes(*bytes))
            .map(Self)
            .ok_or(GroupError::NonCanonicalScalar)
    }
}

impl Group for Ristretto {
    type Scalar = RistrettoScalar;

    const NAME: &'static str = "ristretto255";

    fn identity() -> Self {
        Self(RistrettoPoint::identity())
    }

    fn generator() -> Self {
        Self(curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT)
    }

    fn op(&self, other: &Self) -> Self {
        Self(self.0 + other.0)
    }

    fn exp(&self, s: &RistrettoScalar) -> Self {
        Self(self.0 * s.0)
    }

    fn encode(&self) -> [u8; ENCODED_LEN] {
        self.0.compress().to_bytes()
    }

    fn decode(bytes: &[u8; ENCODED_LEN]) -> Result<Self, GroupError> {
        CompressedRistretto(*bytes)
            .decompress()
            .map(Self)
            .ok_or(GroupError::NonCanonicalElement)
    }

    fn map_to_group(input: &[u8]) -> Self {
        let mut msg = Vec::with_capacity(HASH_DST.len() + input.len());
        msg.extend_from_slice(HASH_DST);
        msg.extend_from_slice(input);
        Self(RistrettoPoint::hash_from_bytes::<Sha512>(&msg))
    }
}
