//! Serde helpers for binary fields in JSON messages.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::group::{Group, GroupError, Scalar, ENCODED_LEN};

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(s)
}

pub fn encode_point<G: Group>(p: &G) -> String {
    b64_encode(&p.encode())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid base64: {0}")]
    Base64(String),
    #[error(transparent)]
    Group(#[from] GroupError),
}

pub fn decode_point<G: Group>(s: &str) -> Result<G, DecodeError> {
    let bytes = b64_decode(s).map_err(|e| DecodeError::Base64(e.to_string()))?;
    Ok(crate::group::decode_slice::<G>(&bytes)?)
}

pub fn encode_scalar<S: Scalar>(s: &S) -> String {
    b64_encode(&s.to_bytes())
}

pub fn decode_scalar<S: Scalar>(s: &str) -> Result<S, DecodeError> {
    let bytes = b64_decode(s).map_err(|e| DecodeError::Base64(e.to_string()))?;
    Ok(crate::group::scalar_from_slice::<S>(&bytes)?)
}

/// `Vec<u8>` as a base64 string.
pub mod b64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::b64_encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        super::b64_decode(&s).map_err(serde::de::Error::custom)
    }
}

/// `[u8; 32]` as a base64 string.
pub mod b64_array {
    use super::ENCODED_LEN;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; ENCODED_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::b64_encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; ENCODED_LEN], D::Error> {
        let s = String::deserialize(d)?;
        let v = super::b64_decode(&s).map_err(serde::de::Error::custom)?;
        v.as_slice()
            .try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {ENCODED_LEN} bytes, got {}", v.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{Ristretto, RistrettoScalar};

    #[test]
    fn point_and_scalar_roundtrip() {
        let g = Ristretto::generator();
        assert_eq!(decode_point::<Ristretto>(&encode_point(&g)).unwrap(), g);
        let s = RistrettoScalar::from_u64(99);
        assert_eq!(decode_scalar::<RistrettoScalar>(&encode_scalar(&s)).unwrap(), s);
        assert!(matches!(
            decode_point::<Ristretto>("AAAA"),
            Err(DecodeError::Group(GroupError::BadLength(3)))
        ));
        assert!(matches!(decode_point::<Ristretto>("!!"), Err(DecodeError::Base64(_))));
    }
}
