//! Order-`P` subgroups of `Z_Q^*` with `Q = m·P + 1` prime.
//!
//! These groups are far too small to be secure. They exist so protocol tests
//! can reconstruct keys, enumerate polynomials and brute-force discrete logs.

use std::ops::{Add, Mul, Neg, Sub};

use rand::RngCore;
use sha2::{Digest, Sha512};

use super::{Group, GroupError, Scalar, ENCODED_LEN};

const HASH_DST: &[u8] = b"dnascreen-v1-residue-map:";

/// Order 7 inside `Z_29^*`.
pub type TestGroup7 = Residue<29, 7>;
/// Order 11 inside `Z_23^*`.
pub type TestGroup11 = Residue<23, 11>;
/// Order 10007 inside `Z_240169^*`.
pub type TestGroup10007 = Residue<240169, 10007>;
/// A 60-bit order subgroup: collision-free at test-table sizes, cheap to exponentiate.
pub type TestGroup61 = Residue<6917529027641085103, 1152921504606847517>;

const fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

const fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Residue modulo the prime `P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModScalar<const P: u64>(u64);

impl<const P: u64> ModScalar<P> {
    pub fn value(&self) -> u64 {
        self.0
    }
}

impl<const P: u64> Add for ModScalar<P> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(((self.0 as u128 + rhs.0 as u128) % P as u128) as u64)
    }
}

impl<const P: u64> Sub for ModScalar<P> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<const P: u64> Mul for ModScalar<P> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(mul_mod(self.0, rhs.0, P))
    }
}

impl<const P: u64> Neg for ModScalar<P> {
    type Output = Self;
    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            Self(P - self.0)
        }
    }
}

impl<const P: u64> Scalar for ModScalar<P> {
    const SMALL_ORDER: Option<u64> = Some(P);

    fn zero() -> Self {
        Self(0)
    }

    fn one() -> Self {
        Self(1 % P)
    }

    fn from_u64(v: u64) -> Self {
        Self(v % P)
    }

    fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut buf = [0u8; 16];
        rng.fill_bytes(&mut buf);
        Self((u128::from_le_bytes(buf) % P as u128) as u64)
    }

    fn is_zero(&self) -> bool {
        self.0 == 0
    }

    fn invert(&self) -> Result<Self, GroupError> {
        if self.0 == 0 {
            return Err(GroupError::InversionOfZero);
        }
        Ok(Self(pow_mod(self.0, P - 2, P)))
    }

    fn to_bytes(&self) -> [u8; ENCODED_LEN] {
        let mut out = [0u8; ENCODED_LEN];
        out[..8].copy_from_slice(&self.0.to_le_bytes());
        out
    }

    fn from_bytes(bytes: &[u8; ENCODED_LEN]) -> Result<Self, GroupError> {
        if bytes[8..].iter().any(|b| *b != 0) {
            return Err(GroupError::NonCanonicalScalar);
        }
        let v = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        if v >= P {
            return Err(GroupError::NonCanonicalScalar);
        }
        Ok(Self(v))
    }
}

/// Element of the order-`P` subgroup of `Z_Q^*`, stored as its residue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Residue<const Q: u64, const P: u64>(u64);

impl<const Q: u64, const P: u64> Residue<Q, P> {
    const COFACTOR: u64 = (Q - 1) / P;

    pub fn value(&self) -> u64 {
        self.0
    }

    /// Discrete log with respect to [`Group::generator`], by exhaustive search.
    /// Only sensible for tiny `P`.
    pub fn brute_force_log(&self) -> Option<ModScalar<P>> {
        let g = Self::generator();
        let mut acc = Self::identity();
        for e in 0..P {
            if acc == *self {
                return Some(ModScalar(e));
            }
            acc = acc.op(&g);
        }
        None
    }

    fn in_subgroup(v: u64) -> bool {
        v != 0 && v < Q && pow_mod(v, P, Q) == 1
    }
}

impl<const Q: u64, const P: u64> Group for Residue<Q, P> {
    type Scalar = ModScalar<P>;

    const NAME: &'static str = "residue";

    fn identity() -> Self {
        Self(1)
    }

    fn generator() -> Self {
        let mut h = 2;
        loop {
            let g = pow_mod(h, Self::COFACTOR, Q);
            if g != 1 {
                return Self(g);
            }
            h += 1;
        }
    }

    fn op(&self, other: &Self) -> Self {
        Self(mul_mod(self.0, other.0, Q))
    }

    fn exp(&self, s: &ModScalar<P>) -> Self {
        Self(pow_mod(self.0, s.0, Q))
    }

    fn encode(&self) -> [u8; ENCODED_LEN] {
        let mut out = [0u8; ENCODED_LEN];
        out[..8].copy_from_slice(&self.0.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8; ENCODED_LEN]) -> Result<Self, GroupError> {
        if bytes[8..].iter().any(|b| *b != 0) {
            return Err(GroupError::NonCanonicalElement);
        }
        let v = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        if !Self::in_subgroup(v) {
            return Err(GroupError::NonCanonicalElement);
        }
        Ok(Self(v))
    }

    fn map_to_group(input: &[u8]) -> Self {
        let mut counter: u32 = 0;
        loop {
            let digest = Sha512::new()
                .chain_update(HASH_DST)
                .chain_update(counter.to_le_bytes())
                .chain_update(input)
                .finalize();
            let wide = u128::from_le_bytes(digest[..16].try_into().expect("16 bytes"));
            let v = (wide % Q as u128) as u64;
            if v != 0 {
                let e = pow_mod(v, Self::COFACTOR, Q);
                if e != 1 {
                    return Self(e);
                }
            }
            counter += 1;
        }
    }
}
